#include "cli.hpp"

int main(int argc, char** argv) { return wsseg::cli::run_cli({argv, argv + argc}); }
