#pragma once

// Synthetic datasets and scratch directories shared by the test binaries.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ccprompt/data.hpp"

namespace fixtures {

/// Each class owns three cue words; every instance carries one cue among
/// four shared filler words. With `overlap` > 0 that fraction of instances
/// draws its cue from a different class instead.
inline std::vector<ccprompt::LabeledInstance> synthetic(int classes, int per_class,
                                                        unsigned seed, double overlap = 0.0,
                                                        const std::string& prefix = "x") {
  std::mt19937_64 gen(seed);
  const std::vector<std::string> filler{"the", "a", "of", "today", "new", "big", "report", "says"};
  std::vector<ccprompt::LabeledInstance> out;
  for (int c = 0; c < classes; ++c)
    for (int n = 0; n < per_class; ++n) {
      ccprompt::LabeledInstance inst;
      inst.id = prefix + "-" + std::to_string(c) + "-" + std::to_string(n);
      inst.label = c;
      int cue_class = c;
      if (overlap > 0.0 && std::uniform_real_distribution<double>(0, 1)(gen) < overlap)
        cue_class = (c + 1 + static_cast<int>(gen() % static_cast<unsigned>(classes - 1))) % classes;
      for (int k = 0; k < 4; ++k) inst.tokens.push_back(filler[gen() % filler.size()]);
      const std::string cue = "cue" + std::to_string(cue_class) + "_" + std::to_string(gen() % 3);
      inst.tokens.insert(inst.tokens.begin() + static_cast<long>(gen() % 5), cue);
      out.push_back(std::move(inst));
    }
  return out;
}

inline ccprompt::LabelSet class_labels(int classes) {
  ccprompt::LabelSet labels;
  for (int c = 0; c < classes; ++c) labels.names.push_back("class" + std::to_string(c));
  return labels;
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() /
              ("ccprompt_" + name + "_" + std::to_string(std::random_device{}()))) {
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(file(name), std::ios::binary) << text;
    return file(name);
  }

 private:
  std::filesystem::path path_;
};

inline std::string read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fixtures
