// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "splatterlab/cli.hpp"

int main(int argc, char **argv) { return splatterlab::dispatch(argc, argv, std::cout, std::cerr); }
