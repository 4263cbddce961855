#pragma once

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <stdexcept>
#include <string>

namespace sadet::detail {

/// Shortest-safe decimal form that parses back to the same double.
inline std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T read_token(std::istream& in, const char* what)
{
    T value{};
    if (!(in >> value)) throw std::runtime_error(std::string("unexpected end of input reading ") + what);
    return value;
}

template <>
inline double read_token<double>(std::istream& in, const char* what)
{
    // strtod keeps subnormals that operator>> would reject.
    std::string tok;
    if (!(in >> tok)) throw std::runtime_error(std::string("unexpected end of input reading ") + what);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw std::runtime_error(std::string("bad number for ") + what + ": " + tok);
    return v;
}

inline void expect_token(std::istream& in, const std::string& token)
{
    std::string got;
    if (!(in >> got) || got != token) {
        throw std::runtime_error("expected '" + token + "' but found '" + got + "'");
    }
}

} // namespace sadet::detail
