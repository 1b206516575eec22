#include "tinv/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tinv/bytes.hpp"

namespace tinv {

using nlohmann::json;

std::string to_string(Label label) { return label == Label::Positive ? "positive" : "negative"; }

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: break;
  }
  return "none";
}

Label parse_label(const std::string& s) {
  if (s == "positive") return Label::Positive;
  if (s == "negative") return Label::Negative;
  throw ManifestError("unknown label '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "none" || s.empty()) return Split::Unassigned;
  throw ManifestError("unknown split '" + s + "'");
}

std::map<Label, std::size_t> DatasetManifest::class_counts() const {
  std::map<Label, std::size_t> counts{{Label::Negative, 0}, {Label::Positive, 0}};
  for (const auto& r : records) ++counts[r.label];
  return counts;
}

std::vector<SliceRecord> DatasetManifest::with_split(Split split) const {
  std::vector<SliceRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [&](const SliceRecord& r) { return r.split == split; });
  return out;
}

std::vector<SliceRecord> DatasetManifest::with_label(Label label) const {
  std::vector<SliceRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [&](const SliceRecord& r) { return r.label == label; });
  return out;
}

namespace {

std::string manifest_to_jsonl(const DatasetManifest& manifest, const std::filesystem::path& base) {
  std::ostringstream os;
  for (const auto& r : manifest.records) {
    std::filesystem::path p = r.path;
    if (!base.empty() && p.is_absolute()) {
      const auto rel = p.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    json j = {{"id", r.id},
              {"path", p.generic_string()},
              {"label", to_string(r.label)},
              {"split", to_string(r.split)},
              {"dataset", r.dataset.empty() ? manifest.name : r.dataset},
              {"config_hash", r.config_hash.empty() ? manifest.config_hash : r.config_hash}};
    if (r.synthetic) j["synthetic"] = true;
    if (!r.note.empty()) j["note"] = r.note;
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace

std::string manifest_to_jsonl(const DatasetManifest& manifest) {
  return manifest_to_jsonl(manifest, {});
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  out << manifest_to_jsonl(manifest, std::filesystem::absolute(path).parent_path());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  DatasetManifest m;
  const auto base = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      SliceRecord r;
      r.id = j.at("id").get<std::string>();
      r.path = j.at("path").get<std::string>();
      if (r.path.is_relative()) r.path = base / r.path;
      r.label = parse_label(j.at("label").get<std::string>());
      r.split = parse_split(j.value("split", std::string("none")));
      r.dataset = j.value("dataset", std::string());
      r.config_hash = j.value("config_hash", std::string());
      r.synthetic = j.value("synthetic", false);
      r.note = j.value("note", std::string());
      if (m.name.empty()) m.name = r.dataset;
      if (m.config_hash.empty()) m.config_hash = r.config_hash;
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ManifestError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return m;
}

std::string manifest_hash(const DatasetManifest& manifest) {
  return bytes::sha256_hex(manifest_to_jsonl(manifest));
}

void validate_splits(const DatasetManifest& manifest) {
  std::map<std::string, Split> seen;
  for (const auto& r : manifest.records) {
    const auto [it, inserted] = seen.emplace(r.id, r.split);
    if (!inserted) {
      throw ManifestError("case '" + r.id + "' appears more than once (" + to_string(it->second) +
                          ", " + to_string(r.split) + ")");
    }
  }
}

void check_disjoint(const std::vector<SliceRecord>& a, const std::vector<SliceRecord>& b,
                    const std::string& what) {
  std::set<std::string> ids;
  for (const auto& r : a) ids.insert(r.id);
  for (const auto& r : b) {
    if (ids.count(r.id)) throw ManifestError(what + ": case '" + r.id + "' is shared");
  }
}

void validate_paths(const DatasetManifest& manifest) {
  for (const auto& r : manifest.records) {
    if (!std::filesystem::exists(r.path)) {
      throw ManifestError("record '" + r.id + "' points to missing file " + r.path.string());
    }
  }
}

DatasetManifest split_manifest(const DatasetManifest& manifest, SplitCounts per_class,
                               std::uint64_t seed) {
  validate_splits(manifest);
  DatasetManifest out{manifest.name, manifest.config_hash, {}};
  const std::size_t need = per_class.train + per_class.val + per_class.test;
  std::mt19937_64 engine(seed);
  for (const Label label : {Label::Negative, Label::Positive}) {
    auto pool = manifest.with_label(label);
    if (pool.size() < need) {
      throw ManifestError("split_manifest: class " + to_string(label) + " has " +
                          std::to_string(pool.size()) + " cases, need " + std::to_string(need));
    }
    std::sort(pool.begin(), pool.end(),
              [](const SliceRecord& x, const SliceRecord& y) { return x.id < y.id; });
    std::shuffle(pool.begin(), pool.end(), engine);
    std::size_t i = 0;
    for (const auto& [split, n] : {std::pair{Split::Train, per_class.train},
                                   std::pair{Split::Val, per_class.val},
                                   std::pair{Split::Test, per_class.test}}) {
      for (std::size_t k = 0; k < n; ++k, ++i) {
        pool[i].split = split;
        out.records.push_back(pool[i]);
      }
    }
  }
  return out;
}

}  // namespace tinv
