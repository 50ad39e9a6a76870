//! Ahead-of-time question trees indexed by response histories.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::infogain::{posterior, response_marginal, Belief};
use crate::response_model::ResponseId;

use super::{make_question, InteractionConfig, NoQuestion, Problem, Question};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "value")]
pub enum NodeStatus {
    Ready(Box<Question>),
    NoQuestion(NoQuestion),
    /// Not reached within the budget.
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub path: Vec<ResponseId>,
    pub status: NodeStatus,
    /// `(response, node index)`, most probable response first.
    pub children: Vec<(ResponseId, usize)>,
}

/// Node 0 is the root. A history with no node means no further question is
/// needed (the belief is confident, the round limit is hit, or the response
/// has probability zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTree {
    pub utterance_id: String,
    pub error_rate: f64,
    pub nodes: Vec<TreeNode>,
}

impl ResponseTree {
    pub fn node(&self, path: &[ResponseId]) -> Option<&TreeNode> {
        let mut idx = 0;
        let mut node = self.nodes.first()?;
        for r in path {
            idx = node.children.iter().find(|(cr, _)| cr == r)?.1;
            node = &self.nodes[idx];
        }
        Some(&self.nodes[idx])
    }

    pub fn question(&self, path: &[ResponseId]) -> Option<Result<&Question, NoQuestion>> {
        self.node(path).map(|n| match &n.status {
            NodeStatus::Ready(q) => Ok(q.as_ref()),
            NodeStatus::NoQuestion(nq) => Err(*nq),
            NodeStatus::Missing => Err(NoQuestion::Missing),
        })
    }

    pub fn question_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.status, NodeStatus::Ready(_)))
            .count()
    }

    pub fn depth(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.status, NodeStatus::Ready(_)))
            .map(|n| n.path.len() + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Expands histories breadth-first, children in descending predicted
/// response probability, until the round limit or the budget. Questions
/// are identical to the ones [`make_question`] produces live for the same
/// history.
pub fn precompute_tree(
    problem: &Problem<'_>,
    belief0: &Belief,
    error_rate: f64,
    cfg: &InteractionConfig,
    budget: Duration,
) -> ResponseTree {
    let deadline = Instant::now().checked_add(budget);
    let mut tree = ResponseTree {
        utterance_id: problem.utterance_id.to_string(),
        error_rate,
        nodes: Vec::new(),
    };
    if super::should_continue(belief0, cfg).is_some() {
        return tree;
    }
    tree.nodes.push(TreeNode {
        path: Vec::new(),
        status: NodeStatus::Missing,
        children: Vec::new(),
    });
    let mut queue: VecDeque<(usize, Belief)> = VecDeque::from([(0, belief0.clone())]);
    while let Some((idx, belief)) = queue.pop_front() {
        let remaining = deadline.map(|d| d.saturating_duration_since(Instant::now()));
        if remaining.is_some_and(|r| r.is_zero()) {
            continue;
        }
        let mut node_cfg = cfg.clone();
        if let Some(r) = remaining {
            node_cfg.synth.budget = node_cfg.synth.budget.min(r);
        }
        let q = match make_question(&belief, problem, &node_cfg, error_rate) {
            Ok(q) => q,
            Err(NoQuestion::Synth(crate::synth::SynthFailure::Timeout)) => continue,
            Err(nq) => {
                tree.nodes[idx].status = NodeStatus::NoQuestion(nq);
                continue;
            }
        };
        let k = q.k();
        let marginal = response_marginal(&belief.weights, &q.assignment, k, error_rate);
        let mut slots: Vec<usize> = (0..=k).collect();
        slots.sort_by(|a, b| marginal[*b].total_cmp(&marginal[*a]).then(a.cmp(b)));
        for slot in slots {
            if marginal[slot] <= 0.0 {
                continue;
            }
            let r = ResponseId::from_slot(slot, k);
            let Some(weights) = posterior(&belief.weights, &q.assignment, k, error_rate, r) else {
                continue;
            };
            let mut history = belief.history.clone();
            history.push((q.id.clone(), r));
            let child = Belief {
                weights,
                round: belief.round + 1,
                history,
            };
            if super::should_continue(&child, cfg).is_some() {
                continue;
            }
            let mut path = q.path.clone();
            path.push(r);
            let ci = tree.nodes.len();
            tree.nodes.push(TreeNode {
                path,
                status: NodeStatus::Missing,
                children: Vec::new(),
            });
            tree.nodes[idx].children.push((r, ci));
            queue.push_back((ci, child));
        }
        tree.nodes[idx].status = NodeStatus::Ready(Box::new(q));
    }
    tree
}
