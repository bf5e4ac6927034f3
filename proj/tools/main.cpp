#include "cli.hpp"

int main(int argc, char** argv) { return vismem::cli::run(argc, argv); }
