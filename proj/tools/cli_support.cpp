#include "cli_support.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "mceage/error.hpp"

#ifndef MCEAGE_GIT_DESCRIBE
#define MCEAGE_GIT_DESCRIBE "unknown"
#endif

namespace mceage::cli {

const fs::path& require(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifact(p);
  return p;
}

std::string sha256File(const fs::path& p) {
  std::ifstream in(require(p), std::ios::binary);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

std::string gitDescribe() { return MCEAGE_GIT_DESCRIBE; }

void RunConfig::validate() const {
  try {
    pipeline.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  for (double b : betas)
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!std::isfinite(threshold)) throw ConfigError("threshold must be finite");
  if (trees < 1) throw ConfigError("trees must be at least 1");
  if (shapeSamples < 100) throw ConfigError("shape-samples must be at least 100");
  if (bootstrap < 1) throw ConfigError("bootstrap must be at least 1");
}

nlohmann::json RunConfig::toJson() const {
  return {{"seed", seed},
          {"jobs", jobs},
          {"pipeline", mceage::toJson(pipeline)},
          {"betas", betas},
          {"threshold", threshold},
          {"trees", trees},
          {"shape_samples", shapeSamples},
          {"bootstrap", bootstrap}};
}

void writeJson(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

nlohmann::json readJson(const fs::path& path) {
  std::ifstream in(require(path));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, path.string() + ": " + e.what());
  }
}

void writeManifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                   const std::vector<fs::path>& inputs, const nlohmann::json& extra) {
  nlohmann::json in = nlohmann::json::array();
  for (const auto& p : inputs) in.push_back({{"path", p.string()}, {"sha256", sha256File(p)}});
  nlohmann::json m{{"command", command},
                   {"seed", cfg.seed},
                   {"git_describe", gitDescribe()},
                   {"config", cfg.toJson()},
                   {"inputs", in}};
  if (!extra.is_null()) m["outputs"] = extra;
  writeJson(dir / "manifest.json", m);
}

void parallelFor(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&]() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= n) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(jobs, static_cast<int>(n)); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string subjectId(int index) {
  std::ostringstream s;
  s << 's' << std::setw(4) << std::setfill('0') << index;
  return s.str();
}

const Subject& DatasetIndex::subject(const std::string& id) const {
  for (const auto& s : subjects)
    if (s.id == id) return s;
  throw InvalidArgument("unknown subject " + id);
}

const std::vector<std::string>& DatasetIndex::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "' (train, val or test)");
}

DatasetIndex loadDataset(const fs::path& root) {
  const nlohmann::json j = readJson(root / "dataset.json");
  DatasetIndex d;
  d.root = root;
  try {
    if (j.at("format") != "mceage-phantom-dataset")
      throw FormatError(FormatError::Kind::MalformedHeader, "not a dataset index");
    for (const auto& s : j.at("subjects"))
      d.subjects.push_back({s.at("id").get<std::string>(), s.at("age").get<double>(), phantomSpecFromJson(s.at("spec"))});
    d.train = j.at("split").at("train").get<std::vector<std::string>>();
    d.val = j.at("split").at("val").get<std::vector<std::string>>();
    d.test = j.at("split").at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, "dataset index: " + std::string(e.what()));
  }
  return d;
}

fs::path mcePath(const fs::path& dir, const std::string& id, Laterality side) {
  return dir / (id + "_" + nameOf(side) + ".ctv");
}

}  // namespace mceage::cli
