#pragma once

#include <stdexcept>
#include <string>

namespace cfp {

// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/geometry violations: mismatched channels, non-integral conv output,
// divisibility failures, bad axes.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error("shape: " + msg) {}
};

// NaN/Inf encountered, or a numeric verification (gradcheck) failed.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric: " + msg) {}
};

// Config file problems: unknown key, bad value, duplicate key.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

// Binary container problems. Each failure mode has a distinct code so
// callers and tests can tell them apart.
class FormatError : public Error {
public:
    enum class Code {
        io,           // open/read/write/rename failed
        bad_magic,    // header magic mismatch
        bad_dtype,    // unsupported dtype byte
        bad_header,   // malformed dims / zero-sized dim
        truncated,    // payload shorter than the header promises
        bad_manifest, // parameter container structure invalid
    };

    FormatError(Code code, const std::string& msg)
        : Error(std::string("format: ") + code_name(code) + ": " + msg), code_(code) {}

    Code code() const noexcept { return code_; }

    static const char* code_name(Code c) {
        switch (c) {
            case Code::io: return "io";
            case Code::bad_magic: return "bad_magic";
            case Code::bad_dtype: return "bad_dtype";
            case Code::bad_header: return "bad_header";
            case Code::truncated: return "truncated";
            case Code::bad_manifest: return "bad_manifest";
        }
        return "unknown";
    }

private:
    Code code_;
};

} // namespace cfp
