#include "merf_cli.hpp"

int main(int argc, char** argv) { return merf::cli::run(argc, argv); }
