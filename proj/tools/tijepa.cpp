#include "tijepa/cli.hpp"

int main(int argc, char** argv) { return tijepa::cli::dispatch(argc, argv); }
