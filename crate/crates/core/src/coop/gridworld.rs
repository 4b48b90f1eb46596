use std::collections::VecDeque;

use nalgebra::DMatrix;

use super::CoopError;
use crate::chain::{ChainError, FiniteMdp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [Self::Up, Self::Down, Self::Left, Self::Right];

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn glyph(self) -> char {
        match self {
            Self::Up => '^',
            Self::Down => 'v',
            Self::Left => '<',
            Self::Right => '>',
        }
    }
}

/// Deterministic gridworld. Cells are numbered row-major from the top-left;
/// moves into a wall leave the agent in place. Every move costs
/// `move_reward`; terminal cells are absorbing with value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    terminal: Vec<bool>,
    move_reward: f64,
    discount: f64,
}

impl GridWorld {
    pub fn new(
        width: usize,
        height: usize,
        terminals: &[usize],
        move_reward: f64,
        discount: f64,
    ) -> Result<Self, CoopError> {
        if width == 0 || height == 0 {
            return Err(CoopError::Grid("width and height must be positive".into()));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(CoopError::Grid(format!(
                "discount {discount} outside (0, 1]"
            )));
        }
        if !move_reward.is_finite() {
            return Err(CoopError::Grid("move reward must be finite".into()));
        }
        let cells = width * height;
        let mut terminal = vec![false; cells];
        for &t in terminals {
            if t >= cells {
                return Err(CoopError::Grid(format!(
                    "terminal cell {t} outside {cells} cells"
                )));
            }
            terminal[t] = true;
        }
        let grid = Self {
            width,
            height,
            terminal,
            move_reward,
            discount,
        };
        if let Some(cell) = grid.cells_without_exit().first() {
            return Err(CoopError::Grid(format!(
                "cell {cell} cannot reach a terminal"
            )));
        }
        Ok(grid)
    }

    /// 4×4 grid, terminal bottom-right, −1 per move.
    pub fn four_by_four(discount: f64) -> Self {
        Self::new(4, 4, &[15], -1.0, discount).expect("valid builtin grid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn n_actions(&self) -> usize {
        GridAction::ALL.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn move_reward(&self) -> f64 {
        self.move_reward
    }

    pub fn is_terminal(&self, cell: usize) -> bool {
        self.terminal[cell]
    }

    pub fn terminals(&self) -> Vec<usize> {
        (0..self.n_cells()).filter(|&c| self.terminal[c]).collect()
    }

    pub fn non_terminal_cells(&self) -> Vec<usize> {
        (0..self.n_cells()).filter(|&c| !self.terminal[c]).collect()
    }

    /// Next cell and reward for `action` from `cell`.
    pub fn step(&self, cell: usize, action: GridAction) -> (usize, f64) {
        let (row, col) = (cell / self.width, cell % self.width);
        let (row, col) = match action {
            GridAction::Up => (row.saturating_sub(1), col),
            GridAction::Down => ((row + 1).min(self.height - 1), col),
            GridAction::Left => (row, col.saturating_sub(1)),
            GridAction::Right => (row, (col + 1).min(self.width - 1)),
        };
        (row * self.width + col, self.move_reward)
    }

    /// Fewest moves from `cell` to any terminal.
    pub fn distances(&self) -> Vec<Option<usize>> {
        let n = self.n_cells();
        let mut dist = vec![None; n];
        let mut queue = VecDeque::new();
        for c in self.terminals() {
            dist[c] = Some(0);
            queue.push_back(c);
        }
        // moves are reversible up to wall clipping, so search predecessors directly
        while let Some(c) = queue.pop_front() {
            let here = dist[c].expect("queued cells have a distance");
            for prev in 0..n {
                if dist[prev].is_some() || self.terminal[prev] {
                    continue;
                }
                if GridAction::ALL.iter().any(|&a| self.step(prev, a).0 == c) {
                    dist[prev] = Some(here + 1);
                    queue.push_back(prev);
                }
            }
        }
        dist
    }

    fn cells_without_exit(&self) -> Vec<usize> {
        self.distances()
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_none())
            .map(|(c, _)| c)
            .collect()
    }

    /// The gridworld as a finite MDP (terminals absorbing with reward 0).
    pub fn to_mdp(&self) -> Result<FiniteMdp, ChainError> {
        let n = self.n_cells();
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for &action in &GridAction::ALL {
            let mut p = DMatrix::zeros(n, n);
            let mut g = DMatrix::zeros(n, n);
            for cell in 0..n {
                if self.terminal[cell] {
                    p[(cell, cell)] = 1.0;
                    continue;
                }
                let (next, reward) = self.step(cell, action);
                p[(cell, next)] = 1.0;
                g[(cell, next)] = reward;
            }
            transitions.push(p);
            rewards.push(g);
        }
        FiniteMdp::new(transitions, rewards, self.terminal.clone(), self.discount)
    }

    /// Text grid of a policy: one glyph per cell, `T` on terminals.
    pub fn render_policy(&self, policy: &[Option<usize>]) -> String {
        let mut out = String::new();
        for row in 0..self.height {
            let line: Vec<String> = (0..self.width)
                .map(|col| {
                    let cell = row * self.width + col;
                    match policy
                        .get(cell)
                        .copied()
                        .flatten()
                        .and_then(GridAction::from_index)
                    {
                        _ if self.terminal[cell] => "T".to_string(),
                        Some(a) => a.glyph().to_string(),
                        None => "?".to_string(),
                    }
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}
