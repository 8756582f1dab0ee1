#include "spinbath/cli.hpp"

int main(int argc, char** argv) { return spinbath::cli::run(argc, argv); }
