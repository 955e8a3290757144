#include "handgcn/dataset_io.hpp"

#include "handgcn/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace handgcn {

namespace {

using nlohmann::json;

std::string upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return out;
}

bool blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

json parse_line(const std::string& line, std::size_t line_no) {
    try {
        json j = json::parse(line);
        if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ParseError(line_no, std::string("malformed record: ") + e.what());
    }
}

void check_header(const json& h, std::string_view format, int version, std::size_t line_no) {
    const auto f = h.find("format");
    if (f == h.end() || !f->is_string() || f->get<std::string>() != format)
        throw ParseError(line_no, "missing header line {\"format\":\"" + std::string(format) + "\",...}");
    const auto v = h.find("version");
    if (v == h.end() || !v->is_number_integer()) throw ParseError(line_no, "header has no integer version");
    if (v->get<int>() != version)
        throw ParseError(line_no, "unsupported " + std::string(format) + " version " + std::to_string(v->get<int>()));
}

std::size_t parse_label(const json& rec, std::size_t line_no) {
    const auto it = rec.find("label");
    if (it == rec.end()) throw ParseError(line_no, "record has no label");
    const auto& vocab = ClassVocabulary::standard();
    if (it->is_number_integer()) {
        const auto v = it->get<long long>();
        if (v < 0 || v >= static_cast<long long>(vocab.size())) throw UnknownLabel(std::to_string(v));
        return static_cast<std::size_t>(v);
    }
    if (!it->is_string()) throw ParseError(line_no, "label must be a class name or index");
    return vocab.index_of(it->get<std::string>());
}

std::string parse_source(const json& rec, std::size_t line_no) {
    const auto it = rec.find("source_id");
    if (it == rec.end()) return "line-" + std::to_string(line_no);
    if (!it->is_string()) throw ParseError(line_no, "source_id must be a string");
    return it->get<std::string>();
}

// Reads `rows` arrays of `width` finite numbers from rec[key].
std::vector<double> parse_rows(const json& rec, const char* key, std::size_t rows, std::size_t width,
                               std::size_t line_no) {
    const auto it = rec.find(key);
    if (it == rec.end() || !it->is_array()) throw ParseError(line_no, std::string("record has no '") + key + "' array");
    if (it->size() != rows)
        throw ParseError(line_no, std::string("'") + key + "' has " + std::to_string(it->size()) + " entries, expected " +
                                      std::to_string(rows));
    std::vector<double> values;
    values.reserve(rows * width);
    for (std::size_t r = 0; r < rows; ++r) {
        const json& row = (*it)[r];
        if (!row.is_array() || row.size() != width)
            throw ParseError(line_no, std::string("'") + key + "' entry " + std::to_string(r) + " must hold " +
                                          std::to_string(width) + " numbers");
        for (const json& v : row) {
            if (!v.is_number()) throw ParseError(line_no, std::string("non-numeric value in '") + key + "'");
            const double d = v.get<double>();
            if (!std::isfinite(d)) throw ParseError(line_no, std::string("non-finite value in '") + key + "'");
            values.push_back(d);
        }
    }
    return values;
}

template <typename Fn>
void for_each_record(std::istream& in, std::string_view format, int version, Fn&& fn) {
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        json j = parse_line(line, line_no);
        if (!header_seen) {
            check_header(j, format, version, line_no);
            fn(j, line_no, true);
            header_seen = true;
            continue;
        }
        fn(j, line_no, false);
    }
    if (!header_seen) throw ParseError(line_no == 0 ? 1 : line_no, "file is empty (no header line)");
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

} // namespace

ClassVocabulary::ClassVocabulary() {
    for (char c = 'A'; c <= 'Z'; ++c) names_.emplace_back(1, c);
    names_.emplace_back("DELETE");
    names_.emplace_back("NOTHING");
    names_.emplace_back("SPACE");
}

const ClassVocabulary& ClassVocabulary::standard() {
    static const ClassVocabulary vocab;
    return vocab;
}

const std::string& ClassVocabulary::name(std::size_t index) const {
    if (index >= names_.size()) throw LabelOutOfRange("class index " + std::to_string(index) + " out of range");
    return names_[index];
}

std::optional<std::size_t> ClassVocabulary::find(std::string_view label) const {
    if (!label.empty() && std::all_of(label.begin(), label.end(), [](unsigned char c) { return std::isdigit(c); })) {
        std::size_t v = 0;
        const auto res = std::from_chars(label.data(), label.data() + label.size(), v);
        if (res.ec == std::errc{} && v < names_.size()) return v;
        return std::nullopt;
    }
    std::string key = upper(label);
    if (key == "DEL") key = "DELETE";
    const auto it = std::find(names_.begin(), names_.end(), key);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
}

std::size_t ClassVocabulary::index_of(std::string_view label) const {
    if (auto idx = find(label)) return *idx;
    throw UnknownLabel(std::string(label));
}

std::vector<HandPose> parse_landmarks(std::istream& in) {
    std::vector<HandPose> poses;
    for_each_record(in, kLandmarkFormat, kLandmarkFormatVersion, [&](const json& rec, std::size_t line_no, bool header) {
        if (header) return;
        HandPose pose;
        pose.label = parse_label(rec, line_no);
        pose.source_id = parse_source(rec, line_no);
        const auto v = parse_rows(rec, "landmarks", kNumLandmarks, 3, line_no);
        for (std::size_t i = 0; i < kNumLandmarks; ++i) pose.landmarks[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
        poses.push_back(std::move(pose));
    });
    return poses;
}

std::vector<HandPose> read_landmarks(const std::filesystem::path& path) {
    auto in = open_in(path);
    return parse_landmarks(in);
}

void write_landmarks(std::ostream& out, std::span<const HandPose> poses) {
    const auto& vocab = ClassVocabulary::standard();
    out << json{{"format", kLandmarkFormat}, {"version", kLandmarkFormatVersion}}.dump() << '\n';
    for (const auto& p : poses) {
        json pts = json::array();
        for (const auto& l : p.landmarks) pts.push_back({l.x, l.y, l.z});
        out << json{{"label", vocab.name(p.label)}, {"landmarks", std::move(pts)}, {"source_id", p.source_id}}.dump()
            << '\n';
    }
}

void write_landmarks(const std::filesystem::path& path, std::span<const HandPose> poses) {
    auto out = open_out(path);
    write_landmarks(out, poses);
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

GraphFile parse_graphs(std::istream& in) {
    GraphFile file;
    for_each_record(in, kGraphFormat, kGraphFormatVersion, [&](const json& rec, std::size_t line_no, bool header) {
        if (header) {
            const auto d = rec.find("desired_distance");
            if (d == rec.end() || !d->is_number() || !(d->get<double>() > 0.0))
                throw ParseError(line_no, "header needs a positive desired_distance");
            file.desired_distance = d->get<double>();
            return;
        }
        PoseGraph g;
        g.label = parse_label(rec, line_no);
        g.source_id = parse_source(rec, line_no);
        g.features = Matrix(kNumLandmarks, kNumNodeFeatures,
                            parse_rows(rec, "features", kNumLandmarks, kNumNodeFeatures, line_no));
        try {
            validate_pose_graph(g, file.desired_distance);
        } catch (const InvalidPose& e) {
            throw ParseError(line_no, e.what());
        }
        file.graphs.push_back(std::move(g));
    });
    return file;
}

GraphFile read_graphs(const std::filesystem::path& path) {
    auto in = open_in(path);
    return parse_graphs(in);
}

void write_graphs(std::ostream& out, const GraphFile& file) {
    const auto& vocab = ClassVocabulary::standard();
    out << json{{"format", kGraphFormat}, {"version", kGraphFormatVersion}, {"desired_distance", file.desired_distance}}
               .dump()
        << '\n';
    for (const auto& g : file.graphs) {
        json rows = json::array();
        for (std::size_t i = 0; i < g.features.rows(); ++i) {
            const auto r = g.features.row(i);
            rows.push_back(json(std::vector<double>(r.begin(), r.end())));
        }
        out << json{{"label", vocab.name(g.label)}, {"features", std::move(rows)}, {"source_id", g.source_id}}.dump()
            << '\n';
    }
}

void write_graphs(const std::filesystem::path& path, const GraphFile& file) {
    auto out = open_out(path);
    write_graphs(out, file);
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<HandPose> synth_dataset(std::size_t n_classes, std::size_t per_class, double noise_sigma,
                                    std::uint64_t seed) {
    if (n_classes < 1 || n_classes > kNumClasses) throw DataError("synth: class count must be in [1, 29]");
    if (per_class < 1) throw DataError("synth: need at least one sample per class");
    if (!(noise_sigma >= 0.0)) throw DataError("synth: noise must be >= 0");
    RngStream rng(seed);
    std::vector<HandPose> poses;
    poses.reserve(n_classes * per_class);
    for (std::size_t c = 0; c < n_classes; ++c) {
        HandPose base;
        base.label = c;
        for (std::size_t i = 1; i < kNumLandmarks; ++i)
            base.landmarks[i] = {rng.uniform(), rng.uniform(), rng.uniform()};
        for (std::size_t s = 0; s < per_class; ++s) {
            HandPose p = base;
            p.source_id = "synth-" + std::to_string(c) + "-" + std::to_string(s);
            if (noise_sigma > 0.0) {
                for (auto& l : p.landmarks) {
                    l.x += noise_sigma * rng.normal();
                    l.y += noise_sigma * rng.normal();
                    l.z += noise_sigma * rng.normal();
                }
            }
            poses.push_back(std::move(p));
        }
    }
    return poses;
}

} // namespace handgcn
