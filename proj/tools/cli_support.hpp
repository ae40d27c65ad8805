#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mceage/phantom.hpp"
#include "mceage/pipeline.hpp"

namespace mceage::cli {

namespace fs = std::filesystem;

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitMissingArtifact = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitBadArtifact = 4;
inline constexpr int kExitNumeric = 5;

class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const fs::path& p) : std::runtime_error("missing artifact: " + p.string()), path(p) {}
  fs::path path;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws MissingArtifact unless the path exists.
const fs::path& require(const fs::path& p);

std::string sha256File(const fs::path& p);
std::string gitDescribe();

// Effective settings shared by every subcommand.
struct RunConfig {
  std::uint64_t seed = 0;
  int jobs = 1;
  PipelineConfig pipeline = phantomPipelineConfig();
  std::vector<double> betas{0.6, 0.8, 0.9, 0.95, 0.99};
  double threshold = kAdultAge;
  int trees = 50;
  int shapeSamples = kDefaultShapeSamples;
  int bootstrap = 10000;

  void validate() const;  // throws ConfigError
  nlohmann::json toJson() const;
};

// Records the command, effective config, input hashes and the source revision.
void writeManifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                   const std::vector<fs::path>& inputs, const nlohmann::json& extra = {});

void writeJson(const fs::path& path, const nlohmann::json& j);
nlohmann::json readJson(const fs::path& path);

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first failure by
// index is rethrown.
void parallelFor(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

struct Subject {
  std::string id;
  double age = 0.0;
  PhantomSpec spec;
};

struct DatasetIndex {
  fs::path root;
  std::vector<Subject> subjects;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  const Subject& subject(const std::string& id) const;
  const std::vector<std::string>& split(const std::string& name) const;
  fs::path volumePath(const std::string& id) const { return root / "scenes" / (id + ".ctv"); }
  fs::path sidecarPath(const std::string& id) const { return root / "scenes" / (id + ".json"); }
};

std::string subjectId(int index);
DatasetIndex loadDataset(const fs::path& root);

fs::path mcePath(const fs::path& dir, const std::string& id, Laterality side);

}  // namespace mceage::cli
