#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "octdn/image.hpp"

namespace octdn {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw DataError("unknown split: '" + s + "'");
}

// Path "-" marks a noisy file that has not been generated yet (phantom-stage
// skeleton manifests).
inline constexpr const char* kNoFile = "-";

struct ManifestEntry {
  std::string clean_path;  // relative to the manifest's directory unless absolute
  std::string noisy_path;
  std::string subject_id;
  Eye eye = Eye::left;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // directory the manifest was loaded from / saved to

  int count(Split s) const {
    int n = 0;
    for (const auto& e : entries)
      if (e.split == s) ++n;
    return n;
  }

  std::filesystem::path resolve(const std::string& rel) const {
    std::filesystem::path p(rel);
    return p.is_absolute() ? p : base_dir / p;
  }
};

// UTF-8 text, one entry per tab-separated line:
//   clean_path <TAB> noisy_path <TAB> subject_id <TAB> eye <TAB> split
// Lines starting with '#' are comments.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::string cur;
    std::istringstream ls(line);
    while (std::getline(ls, cur, '\t')) fields.push_back(cur);
    if (fields.size() != 5)
      throw DataError("manifest " + path.string() + ":" + std::to_string(lineno) +
                      ": expected 5 tab-separated fields");
    ManifestEntry e;
    e.clean_path = fields[0];
    e.noisy_path = fields[1];
    e.subject_id = fields[2];
    e.eye = eye_from_string(fields[3]);
    e.split = split_from_string(fields[4]);
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  os << "# clean_path\tnoisy_path\tsubject_id\teye\tsplit\n";
  for (const auto& e : m.entries) {
    os << e.clean_path << '\t' << e.noisy_path << '\t' << e.subject_id << '\t'
       << to_string(e.eye) << '\t' << to_string(e.split) << '\n';
  }
  if (!os) throw DataError("short write to " + path.string());
}

struct ManifestValidation {
  int train_count = 0;
  int test_count = 0;
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

// Reports split sizes, unreadable files, and subjects straddling splits.
// Failures are reported, not thrown.
inline ManifestValidation validate_manifest(const DatasetManifest& m) {
  ManifestValidation r;
  std::map<std::string, std::set<Split>> subject_splits;
  for (const auto& e : m.entries) {
    if (e.split == Split::train)
      ++r.train_count;
    else
      ++r.test_count;
    subject_splits[e.subject_id].insert(e.split);
    for (const std::string* p : {&e.clean_path, &e.noisy_path}) {
      if (*p == kNoFile) continue;
      try {
        load_bscan(m.resolve(*p));
      } catch (const std::exception& ex) {
        r.problems.push_back("file '" + *p + "': " + ex.what());
      }
    }
  }
  for (const auto& [subject, splits] : subject_splits) {
    if (splits.size() > 1)
      r.problems.push_back("subject '" + subject + "' appears in both train and test splits");
  }
  return r;
}

}  // namespace octdn
