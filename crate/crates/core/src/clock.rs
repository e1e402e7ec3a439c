use chrono::{DateTime, Utc};

/// Source of timestamps. Scripted runs use a fixed instant so their output is
/// byte-reproducible; identifiers derived from timestamps follow suit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }

    /// Fixed clock at 2024-01-01T00:00:00Z, the default for scripted runs.
    pub fn fixed_default() -> Self {
        Clock::Fixed(DateTime::from_timestamp(1_704_067_200, 0).expect("valid timestamp"))
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Clock::Fixed(_))
    }
}
