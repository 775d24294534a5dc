// SPDX-License-Identifier: Apache-2.0
#include "bld/harness/cli.hpp"

int main(int argc, char** argv) { return bld::harness::run_cli(argc, argv); }
