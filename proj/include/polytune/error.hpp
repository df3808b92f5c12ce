// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace polytune {

// Bad inputs: malformed files, config violations, broken preconditions.
// The CLI maps these to exit code 1.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Failures while executing an otherwise valid request: unreachable
// endpoints, I/O errors, corrupt intermediate state. CLI exit code 2.
struct RuntimeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace polytune
