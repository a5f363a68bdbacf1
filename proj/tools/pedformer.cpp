#include "pedformer/cli.hpp"

int main(int argc, char** argv) { return pedformer::cli::run(argc, argv); }
