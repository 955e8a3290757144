#pragma once

#include "handgcn/hand_graph.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace handgcn {

/// The 29 gesture classes: letters A-Z at 0-25, then DELETE (26), NOTHING (27), SPACE (28).
class ClassVocabulary {
public:
    static const ClassVocabulary& standard();

    std::size_t size() const { return names_.size(); }
    const std::string& name(std::size_t index) const;
    std::span<const std::string> names() const { return names_; }

    /// Accepts a class name (case-insensitive; "del" and "delete" both map to DELETE)
    /// or a decimal index in [0, 29).
    std::optional<std::size_t> find(std::string_view label) const;
    /// Like find, but throws UnknownLabel.
    std::size_t index_of(std::string_view label) const;

private:
    ClassVocabulary();
    std::vector<std::string> names_;
};

inline constexpr std::string_view kLandmarkFormat = "handgcn-landmarks";
inline constexpr std::string_view kGraphFormat = "handgcn-graphs";
inline constexpr int kLandmarkFormatVersion = 1;
inline constexpr int kGraphFormatVersion = 1;

/// Parses a landmark file: a header line
///   {"format":"handgcn-landmarks","version":1}
/// followed by one record per line
///   {"label":"A","landmarks":[[x,y,z], ... 21 triples],"source_id":"..."}
/// Blank lines are ignored. Throws ParseError(line, reason) or UnknownLabel.
std::vector<HandPose> parse_landmarks(std::istream& in);
std::vector<HandPose> read_landmarks(const std::filesystem::path& path);

void write_landmarks(std::ostream& out, std::span<const HandPose> poses);
void write_landmarks(const std::filesystem::path& path, std::span<const HandPose> poses);

struct GraphFile {
    double desired_distance = 1.0;
    std::vector<PoseGraph> graphs;
};

/// Parses a graph file: a header line
///   {"format":"handgcn-graphs","version":1,"desired_distance":1.0}
/// then one record per line
///   {"label":"A","features":[[x,y,z,angle], ... 21 rows],"source_id":"..."}
/// Every graph is validated against the preprocessing invariants.
GraphFile parse_graphs(std::istream& in);
GraphFile read_graphs(const std::filesystem::path& path);

void write_graphs(std::ostream& out, const GraphFile& file);
void write_graphs(const std::filesystem::path& path, const GraphFile& file);

/// Synthetic poses: per class a base pose with the wrist at the origin and the
/// other 20 landmarks uniform in the unit cube, then per sample i.i.d. Gaussian
/// jitter of scale `noise_sigma` on every coordinate. Class-major order.
std::vector<HandPose> synth_dataset(std::size_t n_classes, std::size_t per_class, double noise_sigma,
                                    std::uint64_t seed);

} // namespace handgcn
