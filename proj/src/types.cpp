#include "krom/types.hpp"

#include <charconv>
#include <iostream>
#include <mutex>

namespace krom {

namespace {
std::mutex warn_mutex;
WarningHandler& handler_slot() {
    static WarningHandler handler = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
    return handler;
}
}  // namespace

void set_warning_handler(WarningHandler handler) {
    std::lock_guard<std::mutex> lock(warn_mutex);
    handler_slot() = std::move(handler);
}

void warn(std::string_view message) {
    std::lock_guard<std::mutex> lock(warn_mutex);
    if (handler_slot()) handler_slot()(message);
}

std::string to_string(PdeKind kind) {
    switch (kind) {
        case PdeKind::semilinear_elliptic: return "elliptic";
        case PdeKind::darcy: return "darcy";
        case PdeKind::burgers: return "burgers";
        case PdeKind::allen_cahn: return "allen_cahn";
        case PdeKind::navier_stokes: return "navier_stokes";
    }
    return "unknown";
}

std::string format_double(double value) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

PdeKind parse_pde_kind(std::string_view name) {
    if (name == "elliptic" || name == "semilinear_elliptic") return PdeKind::semilinear_elliptic;
    if (name == "darcy") return PdeKind::darcy;
    if (name == "burgers") return PdeKind::burgers;
    if (name == "allen_cahn" || name == "allen-cahn") return PdeKind::allen_cahn;
    if (name == "navier_stokes" || name == "ns" || name == "navier-stokes") return PdeKind::navier_stokes;
    throw Error(ErrorKind::config, "unknown pde kind '" + std::string(name) + "'");
}

}  // namespace krom
