#pragma once

#include <stdexcept>
#include <string>

namespace hls {

/// Invalid arguments or configuration (bad sizes, out-of-range parameters).
class config_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical stage could not produce a trustworthy result
/// (rank deficiency, non-finite values, failed inversion).
class numerical_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a design or snapshot matrix has numerical rank below the
/// requested dimension. `deficiency` is n - rank.
class rank_deficiency_error : public numerical_error {
public:
    rank_deficiency_error(const std::string& what, std::size_t deficiency)
        : numerical_error(what), deficiency_(deficiency) {}

    std::size_t deficiency() const noexcept { return deficiency_; }

private:
    std::size_t deficiency_;
};

/// Wraps an error raised inside a named pipeline stage.
inline std::string stage_message(const std::string& stage, const std::exception& e) {
    return "[" + stage + "] " + e.what();
}

} // namespace hls
