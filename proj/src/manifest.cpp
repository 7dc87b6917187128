#include "cliffm/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cliffm/rng.hpp"

namespace cliffm {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::string expected_header(int num_classes) {
    std::string h = "patient_id,left,right";
    for (int i = 0; i < num_classes; ++i) h += ",L" + std::to_string(i);
    return h;
}

}  // namespace

std::vector<SampleRecord> parse_manifest_text(const std::string& text, int num_classes,
                                              const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    std::vector<SampleRecord> records;
    const std::string header = expected_header(num_classes);
    while (std::getline(is, line)) {
        line_no++;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != header)
                throw ConfigError(origin + ":1: bad header, expected '" + header + "'");
            continue;
        }
        const auto cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != 3 + num_classes)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(3 + num_classes) + " fields, got " +
                              std::to_string(cells.size()));
        SampleRecord rec;
        rec.patient_id = cells[0];
        rec.left_path = cells[1];
        rec.right_path = cells[2];
        if (rec.patient_id.empty())
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty patient_id");
        if (rec.left_path.empty() && rec.right_path.empty())
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": record has no eye image paths");
        for (int c = 0; c < num_classes; ++c) {
            const std::string& cell = cells[static_cast<size_t>(3 + c)];
            if (cell == "0")
                rec.labels.push_back(0);
            else if (cell == "1")
                rec.labels.push_back(1);
            else
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": label L" +
                                  std::to_string(c) + " must be 0 or 1, got '" + cell + "'");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<SampleRecord> parse_manifest(const std::string& path, int num_classes) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_manifest_text(ss.str(), num_classes, path);
}

void write_manifest(const std::string& path, const std::vector<SampleRecord>& records) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot create manifest " + path);
    const int num_classes = records.empty() ? 8 : static_cast<int>(records[0].labels.size());
    f << expected_header(num_classes) << "\n";
    for (const auto& r : records) {
        f << r.patient_id << "," << r.left_path << "," << r.right_path;
        for (u8 l : r.labels) f << "," << static_cast<int>(l);
        f << "\n";
    }
    if (!f) throw IoError("short write to " + path);
}

bool PatientSplit::is_train(const std::string& id) const {
    return std::binary_search(train_ids.begin(), train_ids.end(), id);
}

PatientSplit patient_split(const std::vector<SampleRecord>& records, double ratio, u64 seed) {
    if (ratio <= 0.0 || ratio >= 1.0) throw ConfigError("patient_split: ratio must be in (0,1)");
    // Patient-level label aggregate: elementwise max over the patient's records.
    std::map<std::string, std::vector<u8>> agg;
    for (const auto& r : records) {
        auto& v = agg[r.patient_id];
        if (v.empty()) v.assign(r.labels.size(), 0);
        if (v.size() != r.labels.size())
            throw ConfigError("patient_split: inconsistent label width for patient " +
                              r.patient_id);
        for (size_t i = 0; i < v.size(); ++i) v[i] = std::max(v[i], r.labels[i]);
    }
    if (agg.size() < 2) throw ConfigError("patient_split: need at least 2 patients");

    // Stratify on argmax of the aggregate (ties -> lowest index).
    std::map<int, std::vector<std::string>> strata;
    for (const auto& [id, labels] : agg) {
        int key = 0;
        for (size_t i = 1; i < labels.size(); ++i)
            if (labels[i] > labels[static_cast<size_t>(key)]) key = static_cast<int>(i);
        strata[key].push_back(id);  // map iteration gives ids in sorted order
    }

    PatientSplit out;
    for (auto& [key, ids] : strata) {
        Rng rng = derive_rng(seed, "patient-split", static_cast<u64>(key));
        // Fisher-Yates on the sorted id list.
        for (size_t i = ids.size(); i > 1; --i)
            std::swap(ids[i - 1], ids[static_cast<size_t>(rng.below(i))]);
        if (ids.size() == 1) {
            out.warnings.push_back("stratum " + std::to_string(key) +
                                   " has a single patient; assigned to train");
            out.train_ids.push_back(ids[0]);
            continue;
        }
        const auto n_train = static_cast<size_t>(
            std::llround(ratio * static_cast<double>(ids.size())));
        for (size_t i = 0; i < ids.size(); ++i)
            (i < n_train ? out.train_ids : out.val_ids).push_back(ids[i]);
    }
    std::sort(out.train_ids.begin(), out.train_ids.end());
    std::sort(out.val_ids.begin(), out.val_ids.end());
    return out;
}

std::vector<ExpandedSample> expand_eyes(const std::vector<SampleRecord>& records,
                                        const PatientSplit& split) {
    std::vector<ExpandedSample> out;
    for (const auto& r : records) {
        const SplitTag tag = split.is_train(r.patient_id) ? SplitTag::Train : SplitTag::Val;
        for (const std::string* path : {&r.left_path, &r.right_path}) {
            if (path->empty()) continue;
            ExpandedSample s;
            s.patient_id = r.patient_id;
            s.image_path = *path;
            s.labels = r.labels;
            s.split = tag;
            out.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace cliffm
