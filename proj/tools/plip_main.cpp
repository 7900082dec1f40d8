#include "plip/cli.hpp"

int main(int argc, char** argv) { return plip::cli::dispatch(argc, argv); }
