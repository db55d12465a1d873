#include "ulm/cli.hpp"

int main(int argc, char** argv) { return ulm::cli::dispatch(argc, argv); }
