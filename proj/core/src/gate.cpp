#include "arcslot/gate.hpp"

#include <algorithm>
#include <sstream>

#include "arcslot/error.hpp"

namespace arcslot {

GateParams GateParams::init(const ModelConfig& cfg, Rng& rng) {
  GateParams gp;
  gp.gated_layers = cfg.gated_layers;
  std::sort(gp.gated_layers.begin(), gp.gated_layers.end());
  for (std::size_t i = 0; i < gp.gated_layers.size(); ++i) {
    GateNet net;
    net.fc1 = Affine::gaussian(cfg.gate_hidden, cfg.d, 0.02f, rng);
    net.fc2 = Affine::zeros(1, cfg.gate_hidden);
    net.fc2.b.data[0] = -1.f;
    gp.nets.push_back(std::move(net));
  }
  return gp;
}

bool GateParams::is_gated(int layer) const {
  return std::find(gated_layers.begin(), gated_layers.end(), layer) != gated_layers.end();
}

int GateParams::net_index(int layer) const {
  auto it = std::find(gated_layers.begin(), gated_layers.end(), layer);
  if (it == gated_layers.end())
    throw ContractError("layer " + std::to_string(layer) + " has no gate");
  return static_cast<int>(it - gated_layers.begin());
}

void GateParams::set_trainable(bool on) {
  visit_params([on](const std::string&, Tensor& t) { t.requires_grad = on; });
}

void GateParams::visit_params(const ParamVisitor& fn) {
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const std::string p = "gate.layer" + std::to_string(gated_layers[i]) + ".";
    fn(p + "fc1.w", nets[i].fc1.w);
    fn(p + "fc1.b", nets[i].fc1.b);
    fn(p + "fc2.w", nets[i].fc2.w);
    fn(p + "fc2.b", nets[i].fc2.b);
  }
}

void GateParams::set_all_biases(float b) {
  for (auto& net : nets) net.fc2.b.data[0] = b;
}

Node gate_probability(Tape& t, GateParams& gates, int layer, Node h_slots) {
  GateNet& net = gates.nets[static_cast<std::size_t>(gates.net_index(layer))];
  Node h = t.silu(net.fc1.apply(t, h_slots));
  return t.sigmoid(net.fc2.apply(t, h));
}

Node ste_gate(Tape& t, Node g) {
  Node hard = t.hard_threshold(g, 0.5f);
  return t.add(g, t.stop_gradient(t.sub(hard, g)));
}

GateTrace GateTrace::fresh(int n_layers, int n_slots, int max_loops) {
  GateTrace tr;
  tr.n_layers = n_layers;
  tr.n_slots = n_slots;
  tr.max_loops = max_loops;
  tr.loops.assign(static_cast<std::size_t>(n_layers) * static_cast<std::size_t>(n_slots), 1);
  return tr;
}

int GateTrace::loop(int layer, int slot) const {
  return loops[static_cast<std::size_t>(layer) * n_slots + slot];
}

int& GateTrace::loop(int layer, int slot) {
  return loops[static_cast<std::size_t>(layer) * n_slots + slot];
}

bool GateTrace::counts_equal(const GateTrace& other) const {
  return n_layers == other.n_layers && n_slots == other.n_slots &&
         max_loops == other.max_loops && loops == other.loops;
}

std::string format_trace_cell(int count, int max_loops) {
  if (count < 1 || count > max_loops)
    throw ContractError("loop count " + std::to_string(count) + " outside [1," + std::to_string(max_loops) + "]");
  std::string cell(static_cast<std::size_t>(count), 'L');
  while (static_cast<int>(cell.size()) < max_loops - 1) cell.push_back('0');
  if (count < max_loops) cell.push_back('.');
  return cell;
}

std::string format_trace(const GateTrace& trace, std::span<const int> gated_layers) {
  std::ostringstream os;
  for (int layer : gated_layers) {
    os << "layer=" << layer << " traj=[";
    for (int s = 0; s < trace.n_slots; ++s) {
      if (s) os << ", ";
      os << format_trace_cell(trace.loop(layer, s), trace.max_loops);
    }
    os << "]\n";
  }
  return os.str();
}

namespace {

int parse_cell(const std::string& cell) {
  int count = 0;
  for (char c : cell) {
    if (c == 'L') {
      ++count;
    } else if (c != '0' && c != '.') {
      throw ContractError("bad trace cell '" + cell + "'");
    }
  }
  if (count == 0) throw ContractError("bad trace cell '" + cell + "'");
  return count;
}

}  // namespace

GateTrace parse_trace(const std::string& text, int n_layers_hint) {
  struct Row {
    int layer;
    std::vector<int> counts;
  };
  std::vector<Row> rows;
  int max_loops = 1;
  int n_slots = -1;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::size_t lp = line.find("layer=");
    std::size_t tp = line.find("traj=[");
    std::size_t close = line.rfind(']');
    if (lp == std::string::npos || tp == std::string::npos || close == std::string::npos || close < tp)
      throw ContractError("unparseable trace line '" + line + "'");
    Row row;
    row.layer = std::stoi(line.substr(lp + 6, tp - lp - 6));
    std::string cells = line.substr(tp + 6, close - tp - 6);
    std::istringstream cs(cells);
    std::string cell;
    while (std::getline(cs, cell, ',')) {
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      while (!cell.empty() && cell.back() == ' ') cell.pop_back();
      if (cell.empty()) continue;
      row.counts.push_back(parse_cell(cell));
      max_loops = std::max(max_loops, static_cast<int>(cell.size()));
    }
    if (n_slots < 0) n_slots = static_cast<int>(row.counts.size());
    if (static_cast<int>(row.counts.size()) != n_slots)
      throw ContractError("trace lines disagree on slot count");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ContractError("no trace lines found");
  int n_layers = n_layers_hint;
  for (const auto& r : rows) n_layers = std::max(n_layers, r.layer + 1);
  GateTrace tr = GateTrace::fresh(n_layers, n_slots, max_loops);
  for (const auto& r : rows)
    for (int s = 0; s < n_slots; ++s) tr.loop(r.layer, s) = r.counts[static_cast<std::size_t>(s)];
  return tr;
}

}  // namespace arcslot
