#include <fpgp/cli.hpp>

int main(int argc, char** argv) { return fpgp::cli::run(argc, argv); }
