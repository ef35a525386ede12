#include "cli.hpp"

int main(int argc, char** argv) { return ustatlab::cli::run(argc, argv); }
