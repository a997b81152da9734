#pragma once

#include <stdexcept>
#include <string>

namespace splitlab {

// Shape mismatch between tensor operands.
class shape_error : public std::runtime_error {
public:
    explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

// Precondition violated by a caller (bad index, invalid config value, ...).
class contract_error : public std::invalid_argument {
public:
    explicit contract_error(const std::string& what) : std::invalid_argument(what) {}
};

// NaN or infinity produced where a finite value is required.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Training loss left the finite range; message names the run configuration.
class divergence_error : public std::runtime_error {
public:
    explicit divergence_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed file content (config JSON, checkpoint, transcript, CSV, IDX).
class parse_error : public std::runtime_error {
public:
    explicit parse_error(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem problem (missing file, short read, failed write).
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace splitlab
