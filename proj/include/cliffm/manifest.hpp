#pragma once

#include <string>
#include <vector>

#include "cliffm/common.hpp"

namespace cliffm {

// One patient record from the manifest: optional per-eye image paths plus an
// 8-dim binary label vector. Empty path = eye absent.
struct SampleRecord {
    std::string patient_id;
    std::string left_path;
    std::string right_path;
    std::vector<u8> labels;
};

enum class SplitTag { Train, Val };

struct ExpandedSample {
    std::string patient_id;
    std::string image_path;
    std::vector<u8> labels;
    SplitTag split = SplitTag::Train;
};

// CSV schema: header "patient_id,left,right,L0,...,L7"; label cells must be
// exactly 0 or 1; at least one eye path per row. Errors carry line numbers.
std::vector<SampleRecord> parse_manifest_text(const std::string& text, int num_classes,
                                              const std::string& origin);
std::vector<SampleRecord> parse_manifest(const std::string& path, int num_classes = 8);

void write_manifest(const std::string& path, const std::vector<SampleRecord>& records);

struct PatientSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> warnings;

    bool is_train(const std::string& id) const;
};

// Patient-level stratified split. Stratification key: argmax of the
// per-patient label maximum (ties break to the lowest class index). Patients
// are sorted by id before the seeded shuffle, so the split is invariant to
// record order. Single-patient strata go to train with a warning.
PatientSplit patient_split(const std::vector<SampleRecord>& records, double ratio, u64 seed);

// One sample per present eye path, inheriting the patient split tag.
std::vector<ExpandedSample> expand_eyes(const std::vector<SampleRecord>& records,
                                        const PatientSplit& split);

}  // namespace cliffm
