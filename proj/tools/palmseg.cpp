#include "palmseg/cli.hpp"

int main(int argc, char** argv) { return palmseg::cli_main(argc, argv); }
