#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "medvid/errors.hpp"

namespace medvid::test {

template <typename Fn>
bool throws_code(Fn&& fn, errc code) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code() == code;
    } catch (...) {
        return false;
    }
    return false;
}

// Fresh scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("medvid-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace medvid::test
