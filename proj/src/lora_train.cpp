#include "adaptagen/lora_train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include <spdlog/spdlog.h>

namespace adaptagen {

void DiffusionBatch::validate(int num_timesteps) const {
    if (x_t.size() == 0) {
        throw Error("diffusion batch has an empty x_t");
    }
    if (x_t.rows() != epsilon.rows() || x_t.cols() != epsilon.cols()) {
        throw Error("diffusion batch: epsilon shape differs from x_t");
    }
    if (caption_embedding.rows() > 0 && caption_embedding.cols() != x_t.cols()) {
        throw Error("diffusion batch: caption embedding batch size differs from x_t");
    }
    if (timestep < 0 || timestep >= num_timesteps) {
        throw Error("diffusion batch: timestep " + std::to_string(timestep) + " outside [0, " +
                    std::to_string(num_timesteps) + ")");
    }
}

void ModuleGraph::add_linear(std::string name, Tensor weight, Eigen::VectorXd bias, Activation activation) {
    if (!nodes_.empty() && static_cast<std::size_t>(weight.cols()) != output_dim()) {
        throw Error("node " + name + " expects " + std::to_string(weight.cols()) + " inputs but previous node emits " +
                    std::to_string(output_dim()));
    }
    if (bias.size() != 0 && bias.size() != weight.rows()) {
        throw Error("node " + name + " bias length does not match its output dimension");
    }
    for (const auto& n : nodes_) {
        if (n.name == name) {
            throw Error("duplicate node name " + name);
        }
    }
    nodes_.push_back({std::move(name), std::move(weight), std::move(bias), activation, true});
}

std::size_t ModuleGraph::input_dim() const {
    return nodes_.empty() ? 0 : static_cast<std::size_t>(nodes_.front().weight.cols());
}

std::size_t ModuleGraph::output_dim() const {
    return nodes_.empty() ? 0 : static_cast<std::size_t>(nodes_.back().weight.rows());
}

std::vector<std::string> ModuleGraph::select_targets(const std::vector<std::string>& selectors) const {
    std::vector<std::string> out;
    for (const auto& n : nodes_) {
        for (const auto& s : selectors) {
            if (matches_selector(n.name, s)) {
                out.push_back(n.name);
                break;
            }
        }
    }
    return out;
}

std::vector<TargetShape> ModuleGraph::target_shapes(const std::vector<std::string>& selectors) const {
    std::vector<TargetShape> out;
    for (const auto& name : select_targets(selectors)) {
        for (const auto& n : nodes_) {
            if (n.name == name) {
                out.push_back({n.name, static_cast<std::size_t>(n.weight.rows()), static_cast<std::size_t>(n.weight.cols())});
            }
        }
    }
    return out;
}

Tensor ModuleGraph::assemble_input(const DiffusionBatch& batch) const {
    Tensor input(batch.x_t.rows() + batch.caption_embedding.rows(), batch.x_t.cols());
    input.topRows(batch.x_t.rows()) = batch.x_t;
    if (batch.caption_embedding.rows() > 0) {
        input.bottomRows(batch.caption_embedding.rows()) = batch.caption_embedding;
    }
    if (static_cast<std::size_t>(input.rows()) != input_dim()) {
        throw Error("model expects " + std::to_string(input_dim()) + " input features, batch provides " +
                    std::to_string(input.rows()));
    }
    return input;
}

namespace {

Tensor apply_node(const LinearNode& node, const AdapterEntry* entry, const Tensor& a, double runtime_scale,
                  Tensor* pre_activation) {
    Tensor z = entry != nullptr ? adapter_forward(*entry, node.weight, a, runtime_scale) : Tensor(node.weight * a);
    if (node.bias.size() != 0) {
        z.colwise() += node.bias;
    }
    if (pre_activation != nullptr) {
        *pre_activation = z;
    }
    if (node.activation == Activation::relu) {
        z = z.cwiseMax(0.0);
    }
    return z;
}

}  // namespace

Tensor ModuleGraph::forward(const Tensor& input, const LoraAdapter* adapter, double runtime_scale) const {
    if (nodes_.empty()) {
        throw Error("model graph has no nodes");
    }
    Tensor a = input;
    for (const auto& node : nodes_) {
        const AdapterEntry* entry = adapter != nullptr ? adapter->find(node.name) : nullptr;
        a = apply_node(node, entry, a, runtime_scale, nullptr);
    }
    return a;
}

Tensor ModuleGraph::predict_noise(const DiffusionBatch& batch, const LoraAdapter* adapter) const {
    batch.validate(num_timesteps_);
    return forward(assemble_input(batch), adapter);
}

std::vector<std::uint8_t> ModuleGraph::serialize_base() const {
    std::vector<std::uint8_t> out;
    auto put = [&out](const double* data, Eigen::Index n) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(data);
        out.insert(out.end(), p, p + n * static_cast<Eigen::Index>(sizeof(double)));
    };
    for (const auto& n : nodes_) {
        out.insert(out.end(), n.name.begin(), n.name.end());
        out.push_back(0);
        put(n.weight.data(), n.weight.size());
        put(n.bias.data(), n.bias.size());
    }
    return out;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t step) {
    char name[64];
    std::snprintf(name, sizeof(name), "adapter-%06zu.safetensors", step);
    return dir / name;
}

TrainState train(LoraAdapter& adapter, BatchSource& batches, const ModuleGraph& model, const LoraConfig& cfg,
                 const TrainOptions& options) {
    cfg.validate();
    const auto targets = model.select_targets(cfg.target_selectors);
    if (targets.empty()) {
        throw Error("no model node matches lora.target_selectors [" + join(cfg.target_selectors, ", ") + "]");
    }
    for (const auto& node : model.nodes()) {
        if (!node.frozen) {
            throw Error("base node " + node.name + " is not frozen");
        }
    }
    for (const auto& t : targets) {
        if (adapter.find(t) == nullptr) {
            throw Error("adapter has no entry for targeted node " + t);
        }
    }

    const auto& nodes = model.nodes();
    std::vector<AdapterEntry*> entries(nodes.size(), nullptr);
    for (std::size_t l = 0; l < nodes.size(); ++l) {
        entries[l] = adapter.find(nodes[l].name);
    }

    TrainState last_good;
    TrainState state;
    std::size_t updates = 0;
    bool checkpoint_current = false;

    auto write_checkpoint = [&](std::size_t step) {
        if (options.checkpoint_dir.empty()) {
            return;
        }
        const auto path = checkpoint_path(options.checkpoint_dir, step);
        save_adapter(path, adapter);
        state.checkpoint = path;
        last_good = state;
        last_good.step = step;
        checkpoint_current = true;
    };

    std::vector<Tensor> inputs(nodes.size());
    std::vector<Tensor> pre(nodes.size());
    std::vector<Tensor> grad_a(nodes.size());
    std::vector<Tensor> grad_b(nodes.size());

    for (std::size_t it = 0; it < cfg.max_steps; ++it) {
        auto batch = batches.next();
        if (!batch) {
            break;
        }
        batch->validate(model.num_timesteps());

        Tensor a = model.assemble_input(*batch);
        for (std::size_t l = 0; l < nodes.size(); ++l) {
            inputs[l] = a;
            a = apply_node(nodes[l], entries[l], a, 1.0, &pre[l]);
        }
        const double loss = diffusion_loss(a, batch->epsilon);
        state.step = updates;
        state.loss = loss;
        state.rng_state = batches.rng_state();
        if (!std::isfinite(loss)) {
            throw TrainingAborted("non-finite loss at step " + std::to_string(updates), last_good);
        }
        if (cfg.log_interval > 0 && it % cfg.log_interval == 0 && options.on_state) {
            options.on_state(state);
        }

        // Backward pass; base weights only route gradients.
        Tensor g = (2.0 / static_cast<double>(a.size())) * (a - batch->epsilon);
        double grad_sq = 0.0;
        for (std::size_t l = nodes.size(); l-- > 0;) {
            if (nodes[l].activation == Activation::relu) {
                g = g.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
            }
            Tensor prev;
            if (AdapterEntry* e = entries[l]) {
                const Tensor ax = e->A * inputs[l];
                const Tensor btg = e->B.transpose() * g;
                grad_b[l] = e->scale * (g * ax.transpose());
                grad_a[l] = e->scale * (btg * inputs[l].transpose());
                grad_sq += grad_a[l].squaredNorm() + grad_b[l].squaredNorm();
                if (l > 0) {
                    prev = nodes[l].weight.transpose() * g + e->scale * (e->A.transpose() * btg);
                }
            } else if (l > 0) {
                prev = nodes[l].weight.transpose() * g;
            }
            if (l > 0) {
                g = std::move(prev);
            }
        }

        double step_scale = cfg.learning_rate;
        if (cfg.max_grad_norm > 0.0) {
            const double norm = std::sqrt(grad_sq);
            if (norm > cfg.max_grad_norm) {
                step_scale *= cfg.max_grad_norm / norm;
            }
        }
        std::vector<std::pair<Tensor, Tensor>> updated(nodes.size());
        for (std::size_t l = 0; l < nodes.size(); ++l) {
            if (AdapterEntry* e = entries[l]) {
                updated[l] = {e->A - step_scale * grad_a[l], e->B - step_scale * grad_b[l]};
                if (!updated[l].first.allFinite() || !updated[l].second.allFinite()) {
                    throw TrainingAborted("non-finite adapter update at step " + std::to_string(updates), last_good);
                }
            }
        }
        for (std::size_t l = 0; l < nodes.size(); ++l) {
            if (AdapterEntry* e = entries[l]) {
                e->A = std::move(updated[l].first);
                e->B = std::move(updated[l].second);
            }
        }
        ++updates;
        checkpoint_current = false;
        if (cfg.checkpoint_interval > 0 && updates % cfg.checkpoint_interval == 0) {
            write_checkpoint(updates);
        }
    }

    if (updates == 0) {
        throw Error("training stream produced no batches");
    }
    if (!checkpoint_current) {
        write_checkpoint(updates);
    }
    state.step = updates;
    spdlog::info("train: {} updates, last loss {:.6g}", updates, state.loss);
    return state;
}

}  // namespace adaptagen
