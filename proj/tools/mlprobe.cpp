#include "mlprobe/cli.hpp"

int main(int argc, char **argv) { return mlprobe::cli::cli_main(argc, argv); }
