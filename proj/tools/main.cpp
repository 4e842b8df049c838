#include "cli.hpp"

int main(int argc, char** argv) { return mhla::cli::run(argc, argv); }
