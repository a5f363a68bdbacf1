#pragma once

#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "tensor.hpp"

namespace pedformer {

/// Reads fields out of a JSON object while remembering which keys were used,
/// so unknown keys and type errors can be reported together at the end.
class JsonFields {
public:
    JsonFields(const nlohmann::json& obj, std::string scope, std::vector<std::string>& problems)
        : obj_(obj), scope_(std::move(scope)), problems_(problems) {
        if (!obj_.is_object()) problems_.push_back(scope_ + ": expected a JSON object");
    }

    JsonFields(const JsonFields&) = delete;
    JsonFields& operator=(const JsonFields&) = delete;

    ~JsonFields() {
        if (!obj_.is_object()) return;
        for (const auto& [key, _] : obj_.items())
            if (!seen_.count(key)) problems_.push_back(scope_ + ": unknown key '" + key + "'");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!obj_.is_object() || !obj_.contains(key)) return;
        try {
            out = obj_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            problems_.push_back(scope_ + "." + key + ": wrong type");
        }
    }

    /// Reads a string and converts it with `parse`, which throws ConfigError on bad values.
    template <class T, class Parse>
    void read_enum(const char* key, T& out, Parse parse) {
        std::string s;
        seen_.insert(key);
        if (!obj_.is_object() || !obj_.contains(key)) return;
        try {
            s = obj_.at(key).get<std::string>();
            out = parse(s);
        } catch (const nlohmann::json::exception&) {
            problems_.push_back(scope_ + "." + key + ": expected a string");
        } catch (const ConfigError& e) {
            problems_.push_back(scope_ + "." + key + ": " + e.what());
        }
    }

    /// Hands a nested object to `fn(const json&)`.
    template <class Fn>
    void nested(const char* key, Fn fn) {
        seen_.insert(key);
        if (!obj_.is_object() || !obj_.contains(key)) return;
        fn(obj_.at(key));
    }

    const std::string& scope() const { return scope_; }

private:
    const nlohmann::json& obj_;
    std::string scope_;
    std::vector<std::string>& problems_;
    std::set<std::string> seen_;
};

}  // namespace pedformer
