#include "cli.hpp"

int main(int argc, char** argv) { return ptmap::cli::run(argc, argv); }
