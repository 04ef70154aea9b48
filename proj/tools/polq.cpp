#include "polq/cli.hpp"

int main(int argc, char** argv) { return polq::cli_main(argc, argv); }
