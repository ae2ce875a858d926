#include "flare/dataio.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "flare/errors.hpp"

namespace flare {

namespace {

void append_double(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

double parse_double(const std::string& cell, std::size_t line_no) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        throw DataError("cohort csv line " + std::to_string(line_no) + ": bad number \"" + cell +
                        "\"");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return cells;
}

std::string trimmed(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::string manifest_path_for(const std::string& csv_path) {
    const std::string suffix = ".csv";
    if (csv_path.size() > suffix.size() &&
        csv_path.compare(csv_path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return csv_path.substr(0, csv_path.size() - suffix.size()) + ".manifest.json";
    return csv_path + ".manifest.json";
}

void save_cohort(const std::string& csv_path, const Cohort& cohort,
                 const nlohmann::json& extra_manifest) {
    std::string out;
    out += "id,visit,label,observed";
    for (std::size_t j = 0; j < cohort.dim_volumetric; ++j) out += ",v" + std::to_string(j);
    for (std::size_t j = 0; j < cohort.dim_demographic; ++j) out += ",s" + std::to_string(j);
    for (std::size_t j = 0; j < cohort.dim_cognitive; ++j) out += ",c" + std::to_string(j);
    out += "\n";

    const std::size_t width =
        cohort.dim_volumetric + cohort.dim_demographic + cohort.dim_cognitive;
    for (const auto& traj : cohort.trajectories) {
        for (const auto& visit : traj.visits) {
            out += traj.patient_id;
            out += ',';
            out += std::to_string(visit.index);
            out += ',';
            if (visit.label.has_value()) out += stage_to_string(*visit.label);
            out += ',';
            out += visit.observed ? '1' : '0';
            if (visit.observed) {
                for (const Vec* part : {&visit.volumetric, &visit.demographic, &visit.cognitive})
                    for (double v : *part) {
                        out += ',';
                        append_double(out, v);
                    }
            } else {
                out.append(width, ',');
            }
            out += '\n';
        }
    }

    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw DataError("cannot write " + csv_path);
    csv << out;
    if (!csv.flush()) throw DataError("write failed: " + csv_path);

    nlohmann::json manifest = extra_manifest;
    manifest["dim_volumetric"] = cohort.dim_volumetric;
    manifest["dim_demographic"] = cohort.dim_demographic;
    manifest["dim_cognitive"] = cohort.dim_cognitive;
    manifest["n_patients"] = cohort.trajectories.size();
    std::ofstream mf(manifest_path_for(csv_path), std::ios::binary);
    if (!mf) throw DataError("cannot write " + manifest_path_for(csv_path));
    mf << manifest.dump(2) << "\n";
    if (!mf.flush()) throw DataError("write failed: " + manifest_path_for(csv_path));
}

Cohort load_cohort(const std::string& csv_path) {
    return load_cohort(csv_path, manifest_path_for(csv_path));
}

Cohort load_cohort(const std::string& csv_path, const std::string& manifest_path) {
    std::ifstream mf(manifest_path, std::ios::binary);
    if (!mf) throw DataError("cannot read manifest " + manifest_path);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad manifest " + manifest_path + ": " + e.what());
    }

    Cohort cohort;
    try {
        cohort.dim_volumetric = manifest.at("dim_volumetric").get<std::size_t>();
        cohort.dim_demographic = manifest.at("dim_demographic").get<std::size_t>();
        cohort.dim_cognitive = manifest.at("dim_cognitive").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + manifest_path + " missing dims: " + e.what());
    }

    std::ifstream csv(csv_path, std::ios::binary);
    if (!csv) throw DataError("cannot read " + csv_path);

    const std::size_t width =
        cohort.dim_volumetric + cohort.dim_demographic + cohort.dim_cognitive;
    const std::size_t n_cols = 4 + width;

    std::string line;
    if (!std::getline(csv, line)) throw DataError(csv_path + ": missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (header.size() != n_cols)
        throw DataError(csv_path + ": header has " + std::to_string(header.size()) +
                        " columns, manifest declares " + std::to_string(n_cols));
    if (header[0] != "id" || header[1] != "visit" || header[2] != "label" ||
        header[3] != "observed")
        throw DataError(csv_path + ": header must start with id,visit,label,observed");

    std::unordered_map<std::string, std::size_t> patient_pos;
    std::set<std::pair<std::string, int>> seen;
    std::size_t line_no = 1;
    while (std::getline(csv, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != n_cols)
            throw DataError("cohort csv line " + std::to_string(line_no) + ": expected " +
                            std::to_string(n_cols) + " cells, got " +
                            std::to_string(cells.size()));

        Visit visit;
        const std::string id = trimmed(cells[0]);
        if (id.empty())
            throw DataError("cohort csv line " + std::to_string(line_no) + ": empty patient id");
        try {
            visit.index = std::stoi(trimmed(cells[1]));
        } catch (const std::exception&) {
            throw DataError("cohort csv line " + std::to_string(line_no) + ": bad visit index");
        }
        if (visit.index < 0)
            throw DataError("cohort csv line " + std::to_string(line_no) +
                            ": negative visit index");
        if (!seen.emplace(id, visit.index).second)
            throw DataError("cohort csv line " + std::to_string(line_no) + ": duplicate visit " +
                            std::to_string(visit.index) + " for patient " + id);

        const std::string label = trimmed(cells[2]);
        if (!label.empty()) {
            try {
                visit.label = stage_from_string(label);
            } catch (const DataError& e) {
                throw DataError("cohort csv line " + std::to_string(line_no) + ": " + e.what());
            }
        }

        const std::string observed = trimmed(cells[3]);
        if (observed == "1" || observed == "true")
            visit.observed = true;
        else if (observed == "0" || observed == "false")
            visit.observed = false;
        else
            throw DataError("cohort csv line " + std::to_string(line_no) +
                            ": observed must be 0/1");

        if (visit.observed) {
            struct Section {
                Vec* dst;
                std::size_t dim;
            };
            const Section sections[] = {{&visit.volumetric, cohort.dim_volumetric},
                                        {&visit.demographic, cohort.dim_demographic},
                                        {&visit.cognitive, cohort.dim_cognitive}};
            std::size_t cell = 4;
            for (const auto& [part, dim] : sections) {
                part->reserve(dim);
                for (std::size_t j = 0; j < dim; ++j, ++cell) {
                    const std::string v = trimmed(cells[cell]);
                    if (v.empty())
                        throw DataError("cohort csv line " + std::to_string(line_no) +
                                        ": observed row with empty feature cell " +
                                        header[cell]);
                    const double x = parse_double(v, line_no);
                    if (!std::isfinite(x))
                        throw DataError("cohort csv line " + std::to_string(line_no) +
                                        ": non-finite value in column " + header[cell]);
                    part->push_back(x);
                }
            }
        }

        auto [it, inserted] = patient_pos.emplace(id, cohort.trajectories.size());
        if (inserted) {
            Trajectory traj;
            traj.patient_id = id;
            cohort.trajectories.push_back(std::move(traj));
        }
        cohort.trajectories[it->second].visits.push_back(std::move(visit));
    }

    for (auto& traj : cohort.trajectories)
        std::sort(traj.visits.begin(), traj.visits.end(),
                  [](const Visit& a, const Visit& b) { return a.index < b.index; });
    return cohort;
}

Vec Normalizer::transform(const Vec& x, const Vec& mean, const Vec& sd) const {
    if (x.size() != mean.size())
        throw ShapeError("normalizer: feature dim mismatch (expected " +
                         std::to_string(mean.size()) + ", got " + std::to_string(x.size()) + ")");
    Vec out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / sd[j];
    return out;
}

void Normalizer::apply(Visit& visit) const {
    if (!visit.observed) return;
    visit.volumetric = transform(visit.volumetric, mean_vol, sd_vol);
    visit.demographic = transform(visit.demographic, mean_dem, sd_dem);
    visit.cognitive = transform(visit.cognitive, mean_cog, sd_cog);
}

void Normalizer::apply(Trajectory& traj) const {
    for (auto& visit : traj.visits) apply(visit);
}

void to_json(nlohmann::json& j, const Normalizer& n) {
    j = nlohmann::json{{"mean_vol", n.mean_vol}, {"sd_vol", n.sd_vol},
                       {"mean_dem", n.mean_dem}, {"sd_dem", n.sd_dem},
                       {"mean_cog", n.mean_cog}, {"sd_cog", n.sd_cog},
                       {"fitted_on", n.fitted_on}};
}

void from_json(const nlohmann::json& j, Normalizer& n) {
    j.at("mean_vol").get_to(n.mean_vol);
    j.at("sd_vol").get_to(n.sd_vol);
    j.at("mean_dem").get_to(n.mean_dem);
    j.at("sd_dem").get_to(n.sd_dem);
    j.at("mean_cog").get_to(n.mean_cog);
    j.at("sd_cog").get_to(n.sd_cog);
    n.fitted_on = j.value("fitted_on", std::string());
}

void save_normalizer(const std::string& path, const Normalizer& n) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << nlohmann::json(n).dump(2) << "\n";
    if (!f.flush()) throw DataError("write failed: " + path);
}

Normalizer load_normalizer(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read normalizer " + path);
    nlohmann::json j;
    try {
        f >> j;
        return j.get<Normalizer>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad normalizer " + path + ": " + e.what());
    }
}

namespace {

// Two-pass mean/population-sd per feature, sd floored at 1e-8.
void fit_section(std::span<const Trajectory* const> train, Vec Visit::*field, Vec& mean,
                 Vec& sd) {
    std::size_t n = 0;
    for (const Trajectory* traj : train)
        for (const auto& visit : traj->visits) {
            if (!visit.observed) continue;
            const Vec& x = visit.*field;
            if (mean.empty()) {
                mean.assign(x.size(), 0.0);
                sd.assign(x.size(), 0.0);
            }
            if (x.size() != mean.size()) throw DataError("fit_normalizer: ragged feature dims");
            for (std::size_t j = 0; j < x.size(); ++j) mean[j] += x[j];
            ++n;
        }
    if (n < 2) throw DataError("fit_normalizer: need at least 2 observed training visits");
    for (auto& m : mean) m /= static_cast<double>(n);
    for (const Trajectory* traj : train)
        for (const auto& visit : traj->visits) {
            if (!visit.observed) continue;
            const Vec& x = visit.*field;
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double d = x[j] - mean[j];
                sd[j] += d * d;
            }
        }
    for (auto& v : sd) v = std::max(std::sqrt(v / static_cast<double>(n)), 1e-8);
}

}  // namespace

Normalizer fit_normalizer(std::span<const Trajectory* const> train, std::string fitted_on) {
    Normalizer n;
    n.fitted_on = std::move(fitted_on);
    fit_section(train, &Visit::volumetric, n.mean_vol, n.sd_vol);
    fit_section(train, &Visit::demographic, n.mean_dem, n.sd_dem);
    fit_section(train, &Visit::cognitive, n.mean_cog, n.sd_cog);
    return n;
}

Normalizer fit_normalizer(const Cohort& cohort, std::span<const std::size_t> train_positions,
                          std::string fitted_on) {
    std::vector<const Trajectory*> train;
    train.reserve(train_positions.size());
    for (std::size_t pos : train_positions) train.push_back(&cohort.trajectories.at(pos));
    return fit_normalizer(train, std::move(fitted_on));
}

}  // namespace flare
