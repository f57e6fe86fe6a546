#include "pfgan/evalcli/cli.hpp"

int main(int argc, char** argv) { return pfgan::cli::cli_main(argc, argv); }
