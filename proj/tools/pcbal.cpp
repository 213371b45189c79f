#include "pcbal/cli.hpp"

int main(int argc, char** argv) { return pcbal::cli::run_cli(argc, argv); }
