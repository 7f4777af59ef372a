// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "m2bm/cli.hpp"

int main(int argc, char** argv) { return m2bm::cli::Run(argc, argv); }
