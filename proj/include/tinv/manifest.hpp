#ifndef TINV_MANIFEST_HPP
#define TINV_MANIFEST_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace tinv {

enum class Label { Negative, Positive };
enum class Split { Unassigned, Train, Val, Test };

std::string to_string(Label label);
std::string to_string(Split split);
Label parse_label(const std::string& s);
Split parse_split(const std::string& s);

struct SliceRecord {
  std::string id;  // source case id; one record per case
  std::filesystem::path path;
  Label label = Label::Negative;
  Split split = Split::Unassigned;
  std::string dataset;
  std::string config_hash;
  bool synthetic = false;
  std::string note;  // e.g. modality packing "R=T2W,G=ADC,B=DWI"
};

struct DatasetManifest {
  std::string name;
  std::string config_hash;
  std::vector<SliceRecord> records;

  std::map<Label, std::size_t> class_counts() const;
  std::vector<SliceRecord> with_split(Split split) const;
  std::vector<SliceRecord> with_label(Label label) const;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// JSON Lines, one record per line:
/// {id, path, label, split, dataset, config_hash[, synthetic][, note]}.
/// Relative paths are resolved against the manifest's directory on read.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);
std::string manifest_to_jsonl(const DatasetManifest& manifest);

/// Content hash of the serialized manifest.
std::string manifest_hash(const DatasetManifest& manifest);

/// Throws ManifestError when a case id appears in more than one split or
/// twice within one split.
void validate_splits(const DatasetManifest& manifest);

/// Throws ManifestError if any case id occurs in both record sets.
void check_disjoint(const std::vector<SliceRecord>& a, const std::vector<SliceRecord>& b,
                    const std::string& what);

/// Verifies every record's path exists.
void validate_paths(const DatasetManifest& manifest);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// Case-disjoint stratified split with the given per-class counts; records
/// that are not drawn are dropped. Seeded shuffle per class.
DatasetManifest split_manifest(const DatasetManifest& manifest, SplitCounts per_class,
                               std::uint64_t seed);

}  // namespace tinv

#endif  // TINV_MANIFEST_HPP
