// SPDX-License-Identifier: Apache-2.0
#include "jtfs/cli.hpp"

int main(int argc, char** argv) { return jtfs::cli::run_cli(argc, argv); }
