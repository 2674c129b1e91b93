#include "ioi/cli.hpp"

int main(int argc, char** argv) { return ioi::cli_main(argc, argv); }
