//! Sampled gridworld MDPs with noisy, randomly terminating dynamics.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng, Stream};

pub const GRID_SIZE: usize = 20;
pub const VIEW_SIZE: usize = 9;
pub const VIEW_RADIUS: i64 = (VIEW_SIZE / 2) as i64;
pub const N_ACTIONS: usize = 4;

/// Objective rewards, in the order used by [`ObjectProbs::rewards`].
pub const REWARD_VALUES: [i8; 6] = [-10, -5, -1, 1, 5, 10];

const MAX_SAMPLE_ATTEMPTS: u64 = 100;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("object probabilities must be non-negative and sum to 1 (sum = {0})")]
    BadProbabilities(f64),
    #[error("no world with a reachable start found for seed {seed} after {attempts} attempts")]
    NoViableStart { seed: u64, attempts: u64 },
    #[error("invalid world layout: {0}")]
    Layout(String),
    #[error("world text parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Empty,
    /// An objective carrying one of [`REWARD_VALUES`].
    Reward(i8),
}

impl Cell {
    pub fn reward(self) -> f64 {
        match self {
            Cell::Reward(v) => f64::from(v),
            _ => 0.0,
        }
    }

    /// Objectives worth ±5 or ±10 end the episode; ±1 do not.
    pub fn is_terminal(self) -> bool {
        matches!(self, Cell::Reward(v) if v.abs() >= 5)
    }

    pub fn is_wall(self) -> bool {
        self == Cell::Wall
    }

    fn code(self) -> u8 {
        match self {
            Cell::Wall => WALL_CODE,
            Cell::Empty => EMPTY_CODE,
            Cell::Reward(v) => {
                let i = REWARD_VALUES.iter().position(|&r| r == v).expect("reward value");
                REWARD_CODE_BASE + i as u8
            }
        }
    }

    fn to_char(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Empty => '.',
            Cell::Reward(v) => {
                let i = REWARD_VALUES.iter().position(|&r| r == v).expect("reward value");
                (b'A' + i as u8) as char
            }
        }
    }

    fn from_char(c: char) -> Option<Cell> {
        match c {
            '#' => Some(Cell::Wall),
            '.' => Some(Cell::Empty),
            'A'..='F' => Some(Cell::Reward(REWARD_VALUES[(c as u8 - b'A') as usize])),
            _ => None,
        }
    }
}

/// Out-of-grid code, distinct from walls so keys near borders stay unambiguous.
pub const OUT_OF_BOUNDS_CODE: u8 = 0;
pub const WALL_CODE: u8 = 1;
pub const EMPTY_CODE: u8 = 2;
pub const REWARD_CODE_BASE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub const fn new(row: usize, col: usize) -> Self {
        Position { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [Action::Up, Action::Right, Action::Down, Action::Left];

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (-1, 0),
            Action::Right => (0, 1),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
        }
    }
}

/// Categorical distribution over cell contents used by the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectProbs {
    pub wall: f64,
    pub empty: f64,
    /// Probability of each objective, ordered as [`REWARD_VALUES`].
    pub rewards: [f64; 6],
}

impl Default for ObjectProbs {
    fn default() -> Self {
        ObjectProbs {
            wall: 0.15,
            empty: 0.809,
            // -10, -5, -1, +1, +5, +10
            rewards: [0.01, 0.01, 0.0005, 0.0005, 0.01, 0.01],
        }
    }
}

impl ObjectProbs {
    pub fn validate(&self) -> Result<(), EnvError> {
        let all = self.weights();
        let sum: f64 = all.iter().sum();
        if all.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(EnvError::BadProbabilities(sum));
        }
        Ok(())
    }

    fn weights(&self) -> [f64; 8] {
        let r = self.rewards;
        [self.wall, self.empty, r[0], r[1], r[2], r[3], r[4], r[5]]
    }

    fn draw(&self, u: f64) -> Cell {
        let mut acc = 0.0;
        for (i, p) in self.weights().iter().enumerate() {
            acc += p;
            if u < acc {
                return match i {
                    0 => Cell::Wall,
                    1 => Cell::Empty,
                    k => Cell::Reward(REWARD_VALUES[k - 2]),
                };
            }
        }
        // u landed in the rounding gap above the cumulative sum
        Cell::Empty
    }
}

/// Per-step stochasticity of the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dynamics {
    pub termination_prob: f64,
    pub transition_noise: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Dynamics {
            termination_prob: 0.01,
            transition_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    height: usize,
    width: usize,
    cells: Vec<Cell>,
    initial: Position,
    dynamics: Dynamics,
    seed: u64,
    probs: ObjectProbs,
}

/// Samples a 20×20 world: every cell drawn independently from `probs`, the
/// centre forced empty. Worlds whose start is boxed in by walls are redrawn
/// from a derived seed.
pub fn sample_gridworld(seed: u64, probs: &ObjectProbs, dynamics: Dynamics) -> Result<GridWorld, EnvError> {
    probs.validate()?;
    let initial = Position::new(GRID_SIZE / 2, GRID_SIZE / 2);
    for attempt in 0..MAX_SAMPLE_ATTEMPTS {
        let attempt_seed = if attempt == 0 { seed } else { rng::derive_seed(seed, &[attempt]) };
        let mut rng = rng::stream(attempt_seed, Stream::World);
        let mut cells: Vec<Cell> = (0..GRID_SIZE * GRID_SIZE).map(|_| probs.draw(rng.gen::<f64>())).collect();
        cells[initial.row * GRID_SIZE + initial.col] = Cell::Empty;
        let world = GridWorld {
            height: GRID_SIZE,
            width: GRID_SIZE,
            cells,
            initial,
            dynamics,
            seed,
            probs: *probs,
        };
        if world.start_has_exit() {
            return Ok(world);
        }
    }
    Err(EnvError::NoViableStart {
        seed,
        attempts: MAX_SAMPLE_ATTEMPTS,
    })
}

impl GridWorld {
    /// Builds a world from a character layout (`#` wall, `.` empty, `A`..`F`
    /// objectives -10, -5, -1, 1, 5, 10).
    pub fn from_layout(rows: &[&str], initial: Position, dynamics: Dynamics) -> Result<GridWorld, EnvError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err(EnvError::Layout("empty layout".into()));
        }
        let mut cells = Vec::with_capacity(height * width);
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(EnvError::Layout(format!("row {r} has a different width")));
            }
            for c in row.chars() {
                cells.push(Cell::from_char(c).ok_or_else(|| EnvError::Layout(format!("unknown cell '{c}'")))?);
            }
        }
        if initial.row >= height || initial.col >= width {
            return Err(EnvError::Layout("initial position outside grid".into()));
        }
        let start = cells[initial.row * width + initial.col];
        if start.is_wall() || start.is_terminal() {
            return Err(EnvError::Layout("initial position must be walkable and non-terminal".into()));
        }
        Ok(GridWorld {
            height,
            width,
            cells,
            initial,
            dynamics,
            seed: 0,
            probs: ObjectProbs::default(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn initial_position(&self) -> Position {
        self.initial
    }

    pub fn dynamics(&self) -> Dynamics {
        self.dynamics
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn probs(&self) -> &ObjectProbs {
        &self.probs
    }

    pub fn cell(&self, p: Position) -> Cell {
        self.cells[p.row * self.width + p.col]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| Position::new(r, c)))
    }

    fn cell_at(&self, row: i64, col: i64) -> Option<Cell> {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            None
        } else {
            Some(self.cells[row as usize * self.width + col as usize])
        }
    }

    fn start_has_exit(&self) -> bool {
        Action::ALL.iter().any(|a| {
            let (dr, dc) = a.delta();
            self.cell_at(self.initial.row as i64 + dr, self.initial.col as i64 + dc)
                .is_some_and(|c| !c.is_wall())
        })
    }

    /// Cell the agent lands on when `action` executes without noise.
    pub fn move_target(&self, from: Position, action: Action) -> Position {
        let (dr, dc) = action.delta();
        let (r, c) = (from.row as i64 + dr, from.col as i64 + dc);
        match self.cell_at(r, c) {
            Some(cell) if !cell.is_wall() => Position::new(r as usize, c as usize),
            _ => from,
        }
    }

    /// Egocentric 9×9 view around `position`.
    pub fn observe(&self, position: Position) -> Observation {
        let mut window = [[OUT_OF_BOUNDS_CODE; VIEW_SIZE]; VIEW_SIZE];
        for (i, row) in window.iter_mut().enumerate() {
            for (j, code) in row.iter_mut().enumerate() {
                let r = position.row as i64 + i as i64 - VIEW_RADIUS;
                let c = position.col as i64 + j as i64 - VIEW_RADIUS;
                if let Some(cell) = self.cell_at(r, c) {
                    *code = cell.code();
                }
            }
        }
        Observation { window }
    }

    /// One transition. Noise may replace `action` by a uniform draw; walls and
    /// borders block movement; the entered cell pays its reward before the
    /// termination coin is consulted.
    pub fn step(&self, position: Position, action: Action, rng: &mut Rng) -> StepOutcome {
        let noisy = rng.gen::<f64>() < self.dynamics.transition_noise;
        let executed = if noisy { Action::from_index(rng.gen_range(0..N_ACTIONS)) } else { action };
        let next = self.move_target(position, executed);
        let cell = self.cell(next);
        let reward = if next == position { 0.0 } else { cell.reward() };
        let coin = rng.gen::<f64>() < self.dynamics.termination_prob;
        let cause = if cell.is_terminal() {
            DoneCause::Terminal
        } else if coin {
            DoneCause::RandomTermination
        } else {
            DoneCause::None
        };
        StepOutcome {
            next_position: next,
            reward,
            done: cause != DoneCause::None,
            done_cause: cause,
        }
    }

    /// Text dump: metadata header, legend, then one character per cell.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("gridworld v1\n");
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("size {} {}\n", self.height, self.width));
        out.push_str(&format!("initial {} {}\n", self.initial.row, self.initial.col));
        out.push_str(&format!(
            "dynamics termination_prob={} transition_noise={}\n",
            self.dynamics.termination_prob, self.dynamics.transition_noise
        ));
        let p = &self.probs;
        out.push_str(&format!("probs wall={} empty={}", p.wall, p.empty));
        for (v, q) in REWARD_VALUES.iter().zip(p.rewards) {
            out.push_str(&format!(" r{v}={q}"));
        }
        out.push('\n');
        out.push_str("legend #=wall .=empty");
        for (i, v) in REWARD_VALUES.iter().enumerate() {
            out.push_str(&format!(" {}={v:+}", (b'A' + i as u8) as char));
        }
        out.push('\n');
        for r in 0..self.height {
            out.extend((0..self.width).map(|c| self.cells[r * self.width + c].to_char()));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for GridWorld {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for GridWorld {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |line: usize, msg: &str| EnvError::Parse { line, msg: msg.to_string() };
        let lines: Vec<&str> = s.lines().collect();
        if lines.first() != Some(&"gridworld v1") {
            return Err(err(1, "missing 'gridworld v1' header"));
        }
        let field = |idx: usize, name: &str| -> Result<Vec<&str>, EnvError> {
            let line = lines.get(idx).ok_or_else(|| err(idx + 1, "truncated header"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(err(idx + 1, &format!("expected '{name}'")));
            }
            Ok(parts.collect())
        };
        let num = |idx: usize, s: &str| -> Result<f64, EnvError> {
            let v = s.split_once('=').map_or(s, |(_, v)| v);
            v.parse().map_err(|_| err(idx + 1, &format!("bad number '{s}'")))
        };
        let seed = field(1, "seed")?
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(2, "bad seed"))?;
        let size = field(2, "size")?;
        let initial = field(3, "initial")?;
        let dims: Vec<usize> = size.iter().chain(initial.iter()).filter_map(|v| v.parse().ok()).collect();
        if dims.len() != 4 {
            return Err(err(3, "bad size or initial position"));
        }
        let dynamics_f = field(4, "dynamics")?;
        if dynamics_f.len() != 2 {
            return Err(err(5, "bad dynamics"));
        }
        let dynamics = Dynamics {
            termination_prob: num(4, dynamics_f[0])?,
            transition_noise: num(4, dynamics_f[1])?,
        };
        let probs_f = field(5, "probs")?;
        if probs_f.len() != 8 {
            return Err(err(6, "bad probs"));
        }
        let mut vals = [0.0; 8];
        for (v, s) in vals.iter_mut().zip(&probs_f) {
            *v = num(5, s)?;
        }
        field(6, "legend")?;
        let grid: Vec<&str> = lines[7..].iter().copied().filter(|l| !l.is_empty()).collect();
        if grid.len() != dims[0] {
            return Err(err(8, "grid height does not match size"));
        }
        let mut world = GridWorld::from_layout(&grid, Position::new(dims[2], dims[3]), dynamics)?;
        if world.width != dims[1] {
            return Err(err(8, "grid width does not match size"));
        }
        world.seed = seed;
        world.probs = ObjectProbs {
            wall: vals[0],
            empty: vals[1],
            rewards: [vals[2], vals[3], vals[4], vals[5], vals[6], vals[7]],
        };
        Ok(world)
    }
}

/// Canonical hashable encoding of a 9×9 window.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObsKey(pub [u8; VIEW_SIZE * VIEW_SIZE]);

impl ObsKey {
    /// One hex digit per window cell, row-major.
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|&c| char::from_digit(u32::from(c), 16).expect("code < 16")).collect()
    }

    pub fn from_hex(s: &str) -> Option<ObsKey> {
        if s.len() != VIEW_SIZE * VIEW_SIZE {
            return None;
        }
        let mut key = [0u8; VIEW_SIZE * VIEW_SIZE];
        for (k, ch) in key.iter_mut().zip(s.chars()) {
            *k = ch.to_digit(16)? as u8;
        }
        Some(ObsKey(key))
    }
}

impl fmt::Debug for ObsKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObsKey({})", self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observation {
    pub window: [[u8; VIEW_SIZE]; VIEW_SIZE],
}

impl Observation {
    pub fn key(&self) -> ObsKey {
        let mut key = [0u8; VIEW_SIZE * VIEW_SIZE];
        for (i, row) in self.window.iter().enumerate() {
            key[i * VIEW_SIZE..(i + 1) * VIEW_SIZE].copy_from_slice(row);
        }
        ObsKey(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoneCause {
    Terminal,
    RandomTermination,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_position: Position,
    pub reward: f64,
    pub done: bool,
    pub done_cause: DoneCause,
}

/// Dense index of a distinct observation within one world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub u32);

impl StateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Interns every observation a world can produce, so tabular parameters can
/// live in dense arrays while staying keyed by observation.
#[derive(Debug, Clone)]
pub struct ObservationIndex {
    keys: Vec<ObsKey>,
    lookup: HashMap<ObsKey, StateId>,
    by_cell: Vec<StateId>,
    width: usize,
}

impl ObservationIndex {
    pub fn new(world: &GridWorld) -> Self {
        let mut keys = Vec::new();
        let mut lookup = HashMap::new();
        let by_cell = world
            .positions()
            .map(|p| {
                let key = world.observe(p).key();
                *lookup.entry(key).or_insert_with(|| {
                    keys.push(key);
                    StateId(keys.len() as u32 - 1)
                })
            })
            .collect();
        ObservationIndex {
            keys,
            lookup,
            by_cell,
            width: world.width,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn state_at(&self, p: Position) -> StateId {
        self.by_cell[p.row * self.width + p.col]
    }

    pub fn key(&self, s: StateId) -> ObsKey {
        self.keys[s.index()]
    }

    pub fn lookup(&self, key: &ObsKey) -> Option<StateId> {
        self.lookup.get(key).copied()
    }
}

/// A world bundled with its observation index.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    pub world: GridWorld,
    pub index: ObservationIndex,
}

impl TabularEnv {
    pub fn new(world: GridWorld) -> Self {
        let index = ObservationIndex::new(&world);
        TabularEnv { world, index }
    }

    pub fn n_states(&self) -> usize {
        self.index.len()
    }

    pub fn start(&self) -> Position {
        self.world.initial_position()
    }

    pub fn state(&self, p: Position) -> StateId {
        self.index.state_at(p)
    }

    pub fn step(&self, p: Position, a: Action, rng: &mut Rng) -> StepOutcome {
        self.world.step(p, a, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn quiet() -> Dynamics {
        Dynamics {
            termination_prob: 0.0,
            transition_noise: 0.0,
        }
    }

    fn open_world(n: usize) -> GridWorld {
        let row = ".".repeat(n);
        let rows: Vec<&str> = (0..n).map(|_| row.as_str()).collect();
        GridWorld::from_layout(&rows, Position::new(n / 2, n / 2), Dynamics::default()).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_centered() {
        let probs = ObjectProbs::default();
        let a = sample_gridworld(42, &probs, Dynamics::default()).unwrap();
        let b = sample_gridworld(42, &probs, Dynamics::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.height(), a.width()), (GRID_SIZE, GRID_SIZE));
        assert_eq!(a.initial_position(), Position::new(10, 10));
        assert_eq!(a.cell(a.initial_position()), Cell::Empty);
        assert_ne!(a, sample_gridworld(43, &probs, Dynamics::default()).unwrap());
    }

    #[test]
    fn bad_probabilities_rejected() {
        let probs = ObjectProbs {
            wall: 0.5,
            empty: 0.6,
            rewards: [0.0; 6],
        };
        assert!(matches!(
            sample_gridworld(1, &probs, Dynamics::default()),
            Err(EnvError::BadProbabilities(_))
        ));
    }

    #[test]
    fn all_wall_world_exhausts_retries() {
        let probs = ObjectProbs {
            wall: 1.0,
            empty: 0.0,
            rewards: [0.0; 6],
        };
        assert!(matches!(
            sample_gridworld(1, &probs, Dynamics::default()),
            Err(EnvError::NoViableStart { attempts: 100, .. })
        ));
    }

    #[test]
    fn walled_in_start_is_resampled() {
        let probs = ObjectProbs {
            wall: 0.9,
            empty: 0.1,
            rewards: [0.0; 6],
        };
        for seed in 0..50 {
            let w = sample_gridworld(seed, &probs, Dynamics::default()).unwrap();
            assert!(w.start_has_exit());
        }
    }

    #[test]
    fn wall_fraction_matches_probability() {
        let probs = ObjectProbs::default();
        let mut walls = 0usize;
        let mut total = 0usize;
        for seed in 0..1000 {
            let w = sample_gridworld(seed, &probs, Dynamics::default()).unwrap();
            let centre = w.initial_position();
            for p in w.positions().filter(|&p| p != centre) {
                total += 1;
                walls += usize::from(w.cell(p).is_wall());
            }
        }
        let frac = walls as f64 / total as f64;
        assert!((frac - probs.wall).abs() < 0.01, "wall fraction {frac}");
    }

    #[test]
    fn every_reward_value_appears() {
        let probs = ObjectProbs::default();
        let mut seen = [false; 6];
        for seed in 0..20 {
            let w = sample_gridworld(seed, &probs, Dynamics::default()).unwrap();
            for &c in w.cells() {
                if let Cell::Reward(v) = c {
                    seen[REWARD_VALUES.iter().position(|&r| r == v).unwrap()] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn terminal_cells_are_large_rewards_only() {
        for v in REWARD_VALUES {
            assert_eq!(Cell::Reward(v).is_terminal(), v.abs() >= 5);
        }
        assert!(!Cell::Wall.is_terminal());
        assert!(!Cell::Empty.is_terminal());
        assert_eq!(Cell::Wall.reward(), 0.0);
    }

    #[test]
    fn corner_observation_has_out_of_bounds_margin() {
        let w = open_world(20);
        let obs = w.observe(Position::new(0, 0));
        for i in 0..VIEW_SIZE {
            for j in 0..VIEW_SIZE {
                let expected = if i < 4 || j < 4 { OUT_OF_BOUNDS_CODE } else { EMPTY_CODE };
                assert_eq!(obs.window[i][j], expected, "({i},{j})");
            }
        }
    }

    #[test]
    fn centre_of_open_world_sees_only_empty() {
        let w = open_world(20);
        let obs = w.observe(Position::new(10, 10));
        assert!(obs.window.iter().flatten().all(|&c| c == EMPTY_CODE));
    }

    #[test]
    fn own_cell_is_window_centre() {
        let w = GridWorld::from_layout(&["...", ".D.", "..."], Position::new(1, 1), quiet()).unwrap();
        assert_eq!(w.observe(Position::new(1, 1)).window[4][4], REWARD_CODE_BASE + 3);
    }

    #[test]
    fn repeated_surroundings_share_a_key() {
        // period-3 tiling: any two positions 3 apart, away from borders, see the same window
        let rows: Vec<String> = (0..20)
            .map(|r| (0..20).map(|c| if (r + c) % 3 == 0 { '#' } else { '.' }).collect())
            .collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let w = GridWorld::from_layout(&refs, Position::new(10, 10), Dynamics::default()).unwrap();
        let a = w.observe(Position::new(7, 8)).key();
        let b = w.observe(Position::new(10, 8)).key();
        let c = w.observe(Position::new(7, 9)).key();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let index = ObservationIndex::new(&w);
        assert_eq!(index.state_at(Position::new(7, 8)), index.state_at(Position::new(10, 8)));
    }

    #[test]
    fn walls_block_and_terminals_end() {
        let w = GridWorld::from_layout(&[".#.", ".F.", "..."], Position::new(0, 0), quiet()).unwrap();
        let mut rng = Rng::seed_from_u64(0);
        let bump = w.step(Position::new(0, 0), Action::Right, &mut rng);
        assert_eq!(bump.next_position, Position::new(0, 0));
        assert_eq!(bump.reward, 0.0);
        assert!(!bump.done);
        let off = w.step(Position::new(0, 0), Action::Up, &mut rng);
        assert_eq!(off.next_position, Position::new(0, 0));
        let goal = w.step(Position::new(1, 0), Action::Right, &mut rng);
        assert_eq!(goal.reward, 10.0);
        assert!(goal.done);
        assert_eq!(goal.done_cause, DoneCause::Terminal);
    }

    #[test]
    fn small_rewards_do_not_terminate() {
        let w = GridWorld::from_layout(&[".D", ".."], Position::new(0, 0), quiet()).unwrap();
        let out = w.step(Position::new(0, 0), Action::Right, &mut Rng::seed_from_u64(1));
        assert_eq!(out.reward, 1.0);
        assert!(!out.done);
        assert_eq!(out.done_cause, DoneCause::None);
    }

    #[test]
    fn random_termination_rate_is_binomial() {
        let w = GridWorld::from_layout(
            &["...", "...", "..."],
            Position::new(1, 1),
            Dynamics {
                termination_prob: 0.01,
                transition_noise: 0.0,
            },
        )
        .unwrap();
        let mut rng = Rng::seed_from_u64(5);
        let n = 100_000;
        let hits = (0..n)
            .filter(|i| w.step(Position::new(1, 1), Action::from_index(i % 4), &mut rng).done_cause == DoneCause::RandomTermination)
            .count() as f64;
        let sigma = (n as f64 * 0.01 * 0.99).sqrt();
        assert!((hits - 1000.0).abs() < 3.0 * sigma, "{hits}");
    }

    #[test]
    fn noise_mixes_in_uniform_actions() {
        let w = open_world(5);
        let mut rng = Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = [0usize; 4];
        let centre = Position::new(2, 2);
        for _ in 0..n {
            let next = w.step(centre, Action::Up, &mut rng).next_position;
            let a = Action::ALL.iter().position(|&a| w.move_target(centre, a) == next).unwrap();
            counts[a] += 1;
        }
        for (a, &c) in counts.iter().enumerate() {
            let p = if a == 0 { 0.925 } else { 0.025 };
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - n as f64 * p).abs() < 4.0 * sigma, "action {a}: {c}");
        }
    }

    #[test]
    fn step_is_deterministic_given_rng() {
        let w = sample_gridworld(3, &ObjectProbs::default(), Dynamics::default()).unwrap();
        let p = w.initial_position();
        let a = w.step(p, Action::Left, &mut Rng::seed_from_u64(11));
        let b = w.step(p, Action::Left, &mut Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip() {
        let w = sample_gridworld(17, &ObjectProbs::default(), Dynamics::default()).unwrap();
        let text = w.to_text();
        assert!(text.lines().nth(7).unwrap().len() == 20);
        let back: GridWorld = text.parse().unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn obs_key_hex_round_trip() {
        let w = sample_gridworld(2, &ObjectProbs::default(), Dynamics::default()).unwrap();
        let key = w.observe(Position::new(3, 17)).key();
        assert_eq!(ObsKey::from_hex(&key.to_hex()), Some(key));
        assert_eq!(ObsKey::from_hex("zz"), None);
    }
}
