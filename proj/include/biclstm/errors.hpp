#ifndef BICLSTM_ERRORS_HPP
#define BICLSTM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace biclstm {

// Incompatible tensor/layer shapes. Messages name every shape involved.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid argument value (bad rate, empty sequence, out-of-range index, ...).
struct argument_error : std::invalid_argument {
    explicit argument_error(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed file content. Carries the byte offset where parsing stopped.
struct parse_error : std::runtime_error {
    parse_error(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what + " (at byte " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

// Filesystem-level failure (missing file, unwritable path).
struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace biclstm

#endif
