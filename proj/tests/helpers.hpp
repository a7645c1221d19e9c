#pragma once
// Shared scaffolding for the test binaries: throwaway directories and a few
// tiny fixture graphs used across suites.

#include <filesystem>
#include <string>

#include "knnkge/io.hpp"
#include "knnkge/kg.hpp"

namespace knnkge::testing {

class TempDir {
public:
    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto candidate = base / ("knnkge-test-" + std::to_string(counter_++));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
        throw std::runtime_error("could not create a temp directory");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    std::string write(const std::string& name, const std::string& content) const {
        const std::string p = file(name);
        write_file_atomic(p, content);
        return p;
    }

private:
    static inline int counter_ = 0;
    std::filesystem::path path_;
};

// plato fixture: 3 entities, 2 relations, 2 triples
inline std::string plato_triples() {
    return "plato\tteacher_of\taristotle\n"
           "plato\tborn_in\tathens\n";
}

inline std::string plato_descriptions() {
    return "plato\ta classical greek philosopher\n"
           "aristotle\ta student of plato\n"
           "athens\ta city in greece\n";
}

inline KnowledgeGraph plato_graph(const TempDir& dir) {
    return load_graph(dir.write("t.tsv", plato_triples()),
                      dir.write("d.tsv", plato_descriptions()));
}

}  // namespace knnkge::testing
