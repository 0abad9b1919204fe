#pragma once

namespace vlpre::cli {

// Entry point for the `vlpre` command-line tool. Returns the process exit
// code: 0 on success, 1 on usage errors, 2 on runtime failures.
int run(int argc, char** argv);

}  // namespace vlpre::cli
