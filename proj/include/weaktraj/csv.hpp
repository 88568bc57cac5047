#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>

namespace weaktraj::csv {

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Fixed column order, header row first, '\n' line endings on every platform.
class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}

    void header(std::initializer_list<std::string_view> cols) {
        bool first = true;
        for (auto c : cols) {
            if (!first) os_ << ',';
            os_ << c;
            first = false;
        }
        os_ << '\n';
    }

    Writer& operator<<(double v) { return field(num(v)); }
    Writer& operator<<(int v) { return field(std::to_string(v)); }
    Writer& operator<<(std::size_t v) { return field(std::to_string(v)); }
    Writer& operator<<(std::string_view s) { return field(std::string(s)); }
    Writer& operator<<(const char* s) { return field(std::string(s)); }

    void end_row() {
        os_ << '\n';
        first_ = true;
    }

private:
    Writer& field(const std::string& s) {
        if (!first_) os_ << ',';
        os_ << s;
        first_ = false;
        return *this;
    }

    std::ostream& os_;
    bool first_ = true;
};

inline std::ofstream open(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return os;
}

}  // namespace weaktraj::csv
