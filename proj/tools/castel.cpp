#include "castel/cli.hpp"

int main(int argc, char** argv) { return castel::cli::run(argc, argv); }
