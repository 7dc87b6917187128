#pragma once

// Synthetic 8-label fundus-style dataset. Each class renders a distinct
// procedural pattern; generation is a pure function of the SynthSpec.

#include <string>
#include <vector>

#include "cliffm/manifest.hpp"
#include "cliffm/rng.hpp"
#include "cliffm/tensor.hpp"

namespace cliffm {

struct SynthSpec {
    int num_patients = 800;
    int image_size = 112;
    std::vector<double> label_priors = {0.35, 0.30, 0.30, 0.25, 0.25, 0.30, 0.25, 0.30};
    double second_eye_prob = 0.6;
    u64 seed = 1;

    void validate() const {
        if (num_patients < 2) throw ConfigError("SynthSpec: need at least 2 patients");
        if (image_size < 16) throw ConfigError("SynthSpec: image_size too small");
        if (label_priors.size() != 8) throw ConfigError("SynthSpec: 8 label priors required");
        for (double p : label_priors)
            if (p < 0.0 || p > 1.0) throw ConfigError("SynthSpec: priors must be in [0,1]");
    }
};

// Renders one image for the given active labels. Pattern placement jitter
// comes from `rng`; an all-zero label vector yields background only.
TensorU8 synth_render(const std::vector<u8>& labels, int size, Rng& rng);

struct SynthDataset {
    std::string manifest_path;
    std::vector<SampleRecord> records;
    int num_images = 0;
};

// Writes images/ (8-bit RGB PNG plus a CMT1 u8 twin per image) and
// manifest.csv under out_dir.
SynthDataset synth_generate(const SynthSpec& spec, const std::string& out_dir);

}  // namespace cliffm
