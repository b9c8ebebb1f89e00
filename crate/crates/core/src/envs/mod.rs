//! Task environments: multi-room gridworlds with variants, ASCII maps and
//! the reduced Taxi domain.

mod grid;
mod sim;
mod taxi;

pub use grid::{
    build_rooms, grid_to_mdp, parse_grid, Cell, Direction, GridSpec, RoomsLayout, Variant, DEFAULT_SLIP, GRAVITY_SLIDE,
    NEGATIVE_HALLWAY_REWARD,
};
pub use sim::{rng_stream, sample_dense, sample_sparse, Simulator, Step};
pub use taxi::{
    build_taxi, build_taxi_with, taxi_step, TaxiAction, TaxiRewards, TaxiState, DEPOTS, IN_TAXI, TAXI_STATES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

pub const DEFAULT_DISCOUNT: f64 = 0.95;

fn default_discount() -> f64 {
    DEFAULT_DISCOUNT
}

/// Plain-text (TOML) description of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvDescriptor {
    Rooms {
        rooms_x: usize,
        rooms_y: usize,
        room_size: usize,
        #[serde(default)]
        variant: Variant,
        #[serde(default)]
        goal_room: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slip: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        goal_reward: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        firepit_reward: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hallway_reward: Option<f64>,
        #[serde(default = "default_discount")]
        discount: f64,
    },
    Taxi {
        #[serde(default)]
        rewards: TaxiRewards,
        #[serde(default = "default_discount")]
        discount: f64,
    },
    Grid {
        map: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slip: Option<f64>,
        #[serde(default = "default_discount")]
        discount: f64,
    },
}

/// A constructed environment.
#[derive(Debug, Clone)]
pub struct Environment {
    pub descriptor: EnvDescriptor,
    pub grid: Option<GridSpec>,
    pub mdp: TabularMdp<f64>,
}

impl EnvDescriptor {
    pub fn rooms(rooms_x: usize, rooms_y: usize, room_size: usize, variant: Variant) -> Self {
        EnvDescriptor::Rooms {
            rooms_x,
            rooms_y,
            room_size,
            variant,
            goal_room: 0,
            slip: None,
            goal_reward: None,
            firepit_reward: None,
            hallway_reward: None,
            discount: DEFAULT_DISCOUNT,
        }
    }

    pub fn four_small_rooms() -> Self {
        Self::rooms(2, 2, 5, Variant::Default)
    }

    pub fn four_large_rooms() -> Self {
        Self::rooms(2, 2, 8, Variant::Default)
    }

    pub fn six_large_rooms() -> Self {
        Self::rooms(3, 2, 8, Variant::Default)
    }

    pub fn nine_large_rooms() -> Self {
        Self::rooms(3, 3, 8, Variant::Default)
    }

    pub fn taxi() -> Self {
        EnvDescriptor::Taxi { rewards: TaxiRewards::default(), discount: DEFAULT_DISCOUNT }
    }

    /// Looks up a canonical layout by name.
    pub fn named(name: &str) -> Result<Self> {
        let key = name.to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match key.as_str() {
            "foursmallrooms" => Self::four_small_rooms(),
            "fourlargerooms" => Self::four_large_rooms(),
            "sixlargerooms" => Self::six_large_rooms(),
            "ninelargerooms" => Self::nine_large_rooms(),
            "taxi" | "taxiv2" => Self::taxi(),
            _ => return Err(Error::config(format!("unknown environment {name:?}"))),
        })
    }

    pub fn with_goal_room(mut self, room: usize) -> Self {
        if let EnvDescriptor::Rooms { goal_room, .. } = &mut self {
            *goal_room = room;
        }
        self
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        if let EnvDescriptor::Rooms { variant, .. } = &mut self {
            *variant = v;
        }
        self
    }

    pub fn discount(&self) -> f64 {
        match self {
            EnvDescriptor::Rooms { discount, .. }
            | EnvDescriptor::Taxi { discount, .. }
            | EnvDescriptor::Grid { discount, .. } => *discount,
        }
    }

    pub fn build(&self) -> Result<Environment> {
        let (grid, mdp) = match self {
            EnvDescriptor::Rooms {
                rooms_x,
                rooms_y,
                room_size,
                variant,
                goal_room,
                slip,
                goal_reward,
                firepit_reward,
                hallway_reward,
                discount,
            } => {
                let mut grid =
                    RoomsLayout::new(*rooms_x, *rooms_y, *room_size, *variant).with_goal_room(*goal_room).grid()?;
                if let Some(x) = slip {
                    grid.slip = *x;
                }
                if let Some(x) = goal_reward {
                    grid.goal_reward = *x;
                }
                if let Some(x) = firepit_reward {
                    grid.firepit_reward = *x;
                }
                if let Some(x) = hallway_reward {
                    grid.hallway_reward = *x;
                }
                let mdp = grid_to_mdp(&grid, *discount)?;
                (Some(grid), mdp)
            }
            EnvDescriptor::Taxi { rewards, discount } => (None, build_taxi_with(rewards, *discount)?),
            EnvDescriptor::Grid { map, slip, discount } => {
                let mut grid = parse_grid(map)?;
                if let Some(x) = slip {
                    grid.slip = *x;
                }
                let mdp = grid_to_mdp(&grid, *discount)?;
                (Some(grid), mdp)
            }
        };
        Ok(Environment { descriptor: self.clone(), grid, mdp })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("descriptor serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("environment descriptor: {e}")))
    }
}

pub fn build_env(descriptor: &EnvDescriptor) -> Result<TabularMdp<f64>> {
    descriptor.build().map(|e| e.mdp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_text_round_trip() {
        let d = EnvDescriptor::six_large_rooms().with_goal_room(3).with_variant(Variant::Gravity);
        let text = d.to_toml();
        assert!(text.contains("kind = \"rooms\""));
        assert_eq!(EnvDescriptor::from_toml(&text).unwrap(), d);
        let t = EnvDescriptor::from_toml("kind = \"taxi\"").unwrap();
        assert_eq!(t, EnvDescriptor::taxi());
    }

    #[test]
    fn named_layouts() {
        let env = EnvDescriptor::named("FourSmallRooms").unwrap().build().unwrap();
        assert_eq!(env.mdp.num_states(), 104);
        assert!(EnvDescriptor::named("Moon").is_err());
    }
}
