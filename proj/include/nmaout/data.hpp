#pragma once

// Arm-level binomial network data: validated containers, graph connectivity
// and CSV/JSON interchange.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nmaout {

// Treatments are numbered 1..K; treatment 1 is the global reference.
using TreatmentId = int;

struct Arm {
    TreatmentId treatment = 0;
    int events = 0;
    int total = 1;

    friend bool operator==(const Arm&, const Arm&) = default;
};

// A trial with at least two arms on distinct treatments. The baseline is the
// arm with the lowest treatment index.
class Study {
public:
    Study(std::string id, std::vector<Arm> arms);

    const std::string& id() const noexcept { return id_; }
    std::span<const Arm> arms() const noexcept { return arms_; }
    std::size_t num_arms() const noexcept { return arms_.size(); }
    TreatmentId baseline() const noexcept { return arms_[baseline_arm_].treatment; }
    std::size_t baseline_arm() const noexcept { return baseline_arm_; }
    bool contains(TreatmentId t) const noexcept;

    friend bool operator==(const Study&, const Study&) = default;

private:
    std::string id_;
    std::vector<Arm> arms_;
    std::size_t baseline_arm_ = 0;
};

struct ConnectivityResult {
    bool connected = false;
    // Sorted treatment ids per component, components ordered by smallest id.
    std::vector<std::vector<TreatmentId>> components;
};

ConnectivityResult connectivity_check(std::span<const Study> studies, int num_treatments);

class NetworkDataset {
public:
    // Throws ValidationError unless every index is in 1..K and the comparison
    // graph is connected. Empty labels default to "1".."K".
    NetworkDataset(std::vector<Study> studies, int num_treatments,
                   std::vector<std::string> treatment_labels = {});

    std::span<const Study> studies() const noexcept { return studies_; }
    const Study& study(std::size_t i) const { return studies_.at(i); }
    std::size_t num_studies() const noexcept { return studies_.size(); }
    int num_treatments() const noexcept { return num_treatments_; }
    std::span<const std::string> treatment_labels() const noexcept { return labels_; }
    const std::string& label(TreatmentId t) const { return labels_.at(static_cast<std::size_t>(t - 1)); }
    std::size_t num_arms() const noexcept;

    std::optional<std::size_t> find_study(std::string_view id) const noexcept;
    // Like find_study but throws ValidationError naming the missing id.
    std::size_t study_index(std::string_view id) const;
    std::optional<TreatmentId> find_treatment(std::string_view label) const noexcept;

    // Dataset restricted to the studies whose index is not in `excluded`.
    // Throws ValidationError naming the comparisons that lose connectivity.
    NetworkDataset without(std::span<const std::size_t> excluded) const;

    friend bool operator==(const NetworkDataset&, const NetworkDataset&) = default;

private:
    std::vector<Study> studies_;
    int num_treatments_ = 0;
    std::vector<std::string> labels_;
};

ConnectivityResult connectivity_check(const NetworkDataset& ds);

struct ObservedProportions {
    struct Entry {
        std::string study;
        TreatmentId treatment = 0;
        double x = 0.0;
    };
    std::vector<Entry> values;

    std::vector<double> pool() const;
};

// One entry per arm in study order, then arm order.
ObservedProportions observed_proportions(const NetworkDataset& ds);

enum class DataFormat { csv, json };

DataFormat format_from_path(const std::filesystem::path& path);

// CSV header `study,treatment,events,total`; treatments are free-form labels
// remapped to 1..K in order of first appearance. JSON may fix the order with
// an explicit "treatments" list.
NetworkDataset load_dataset(const std::filesystem::path& path, DataFormat format);
NetworkDataset parse_dataset_csv(std::string_view text);
NetworkDataset parse_dataset_json(std::string_view text);

void write_dataset(const NetworkDataset& ds, const std::filesystem::path& path, DataFormat format);
std::string dataset_to_csv(const NetworkDataset& ds);
std::string dataset_to_json(const NetworkDataset& ds);

}  // namespace nmaout
