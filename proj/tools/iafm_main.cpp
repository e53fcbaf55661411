#include "iafm/cli.hpp"

int main(int argc, char** argv) { return iafm::cli::run(argc, argv); }
