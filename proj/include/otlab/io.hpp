#pragma once

#include <json.hpp>
#include <string>

#include "otlab/brenier.hpp"
#include "otlab/estimators.hpp"
#include "otlab/measure.hpp"
#include "otlab/solver.hpp"

namespace otlab {

using Json = nlohmann::ordered_json;

// Shortest round-trip decimal form; used everywhere a double lands in text
// output so reruns produce byte-identical files.
std::string format_double(double v);
double parse_double(const std::string& s);

// {"d": ..., "points": [[...], ...], "weights": [...]}
Json measure_to_json(const DiscreteMeasure& mu);
DiscreteMeasure measure_from_json(const Json& j);

// One point per row, weight in the last column.
std::string measure_to_csv(const DiscreteMeasure& mu);
DiscreteMeasure measure_from_csv(const std::string& text);

// Dispatch on extension: .json or .csv.
DiscreteMeasure read_measure(const std::string& path);
void write_measure(const DiscreteMeasure& mu, const std::string& path);

// {"cost": ..., "entries": [[i, j, mass], ...], "dual_f": [...],
//  "dual_g": [...]}; duals are empty arrays when absent. The marginals are
// not embedded, so reading a plan back needs both measures.
Json coupling_to_json(const Coupling& c);
Coupling coupling_from_json(const Json& j, DiscreteMeasure source,
                            DiscreteMeasure target);

// {"kind": "affine", "A": ..., "b": ..., "alpha": ..., "beta": ...} or
// {"kind": "separable", "f_spec": [{"a": ..., "c": ...}, ...], ...}.
// Stored alpha/beta are checked against the parameters on load.
Json model_to_json(const BrenierModel& m);
BrenierModel model_from_json(const Json& j);

Json estimate_to_json(const TransportMapEstimate& est);
TransportMapEstimate estimate_from_json(const Json& j);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace otlab
