#pragma once

// Shared fixtures: temp directories, exemplar pools and scripted answer sets.

#include "faith/gateway.hpp"
#include "faith/log.hpp"

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace support {

class TempDir {
  public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("faith_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

    std::string write(const std::string& name, const std::string& content) const {
        std::ofstream out(file(name), std::ios::binary);
        out << content;
        return file(name);
    }

  private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::vector<faith::Exemplar> exemplar_pool(int n = 10) {
    std::vector<faith::Exemplar> pool;
    for (int i = 0; i < n; ++i)
        pool.push_back({i, "Demo question number " + std::to_string(i) + "?", "demo answer " + std::to_string(i)});
    return pool;
}

/// Script K answers (one per sample ordinal) for a question.
inline void script_answers(faith::ScriptedBackend& b, const std::string& question, const std::vector<std::string>& answers,
                           double logprob = -0.5) {
    for (std::size_t k = 0; k < answers.size(); ++k)
        b.on_question(question, {answers[k], std::vector<double>{logprob}, 0}, static_cast<int>(k));
}

/// Collects warnings for the lifetime of the object.
class CaptureWarnings {
  public:
    CaptureWarnings() {
        previous_ = faith::log::set_sink([this](std::string_view level, std::string_view msg) {
            if (level == "warn") messages.emplace_back(msg);
        });
    }
    ~CaptureWarnings() { faith::log::set_sink(std::move(previous_)); }
    std::vector<std::string> messages;

  private:
    faith::log::Sink previous_;
};

}  // namespace support
