#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace pedformer {

/// Columns of a CSV file with a header row; empty fields read as NaN.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ParseError("csv: no column '" + name + "'");
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("csv: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header = split_csv_line(line);
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != t.header.size())
            throw ParseError("csv line " + std::to_string(n) + ": expected " + std::to_string(t.header.size()) + " fields, got " +
                             std::to_string(fields.size()));
        std::vector<double> row;
        for (const auto& f : fields) {
            if (f.empty()) {
                row.push_back(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            try {
                std::size_t used = 0;
                row.push_back(std::stod(f, &used));
                if (used != f.size()) throw std::invalid_argument(f);
            } catch (const std::exception&) {
                throw ParseError("csv line " + std::to_string(n) + ": '" + f + "' is not a number");
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    return read_csv(in);
}

struct Series {
    std::string name;
    std::vector<double> x, y;
};

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

/// Line chart of one or more series as a standalone SVG document. Points with
/// non-finite values are skipped. Each point carries its exact value in a
/// data-y attribute.
inline std::string render_svg(const std::string& title, const std::vector<Series>& series, double width = 640, double height = 400) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
    if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
    const double left = 60, right = 20, top = 40, bottom = 40;
    const double pw = width - left - right, ph = height - top - bottom;
    const auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    const auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    std::ostringstream os;
    os.precision(10);
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 " << width
       << ' ' << height << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
       << xml_escape(title) << "</text>\n"
       << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
       << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << left - 4 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
       << ymax << "</text>\n"
       << "<text x=\"" << left - 4 << "\" y=\"" << top + ph << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
       << ymin << "</text>\n"
       << "<text x=\"" << left << "\" y=\"" << top + ph + 14 << "\" font-family=\"sans-serif\" font-size=\"10\">" << xmin << "</text>\n"
       << "<text x=\"" << left + pw << "\" y=\"" << top + ph + 14 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
       << xmax << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = colors[k % 6];
        std::ostringstream pts;
        pts.precision(10);
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        os << "<g data-series=\"" << xml_escape(s.name) << "\">\n";
        if (!pts.str().empty())
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
                os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"2.5\" fill=\"" << color << "\" data-x=\""
                   << s.x[i] << "\" data-y=\"" << s.y[i] << "\"/>\n";
        os << "<text x=\"" << left + pw - 4 << "\" y=\"" << top + 14 * (k + 1) << "\" text-anchor=\"end\" fill=\"" << color
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(s.name) << "</text>\n";
        os << "</g>\n";
    }
    os << "</svg>\n";
    return os.str();
}

/// Long-format rows "epoch,metric,value" for every non-empty cell.
inline std::string tidy_csv(const CsvTable& table, const std::string& x_column = "epoch") {
    const std::size_t xc = table.column(x_column);
    std::ostringstream os;
    os.precision(17);
    os << x_column << ",metric,value\n";
    for (const auto& row : table.rows)
        for (std::size_t c = 0; c < table.header.size(); ++c) {
            if (c == xc || std::isnan(row[c])) continue;
            os << row[xc] << ',' << table.header[c] << ',' << row[c] << '\n';
        }
    return os.str();
}

/// Series for the named columns against `x_column`.
inline std::vector<Series> table_series(const CsvTable& table, const std::vector<std::string>& columns,
                                        const std::string& x_column = "epoch") {
    const std::size_t xc = table.column(x_column);
    std::vector<Series> out;
    for (const auto& name : columns) {
        const std::size_t c = table.column(name);
        Series s{name, {}, {}};
        for (const auto& row : table.rows) {
            s.x.push_back(row[xc]);
            s.y.push_back(row[c]);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace pedformer
