#include "evodg_cli.hpp"

int main(int argc, char** argv) { return evodg::cli::run(argc, argv); }
