#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace drme {

/// Array dimensions do not agree.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct EmptyBatchError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A class label outside [0, C).
struct LabelError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// Invalid experiment, stream or training configuration.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Malformed binary input. `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace drme
