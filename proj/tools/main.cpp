#include "vlpre/cli.hpp"

int main(int argc, char** argv) { return vlpre::cli::run(argc, argv); }
