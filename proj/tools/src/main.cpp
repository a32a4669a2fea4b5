#include "xlkd/cli.hpp"

int main(int argc, char** argv) { return xlkd::cli::run({argv, argv + argc}); }
