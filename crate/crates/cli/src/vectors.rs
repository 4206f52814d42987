use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use gloss_core::events::{GeoCoord, MapView};
use gloss_core::geo::to_pixel;
use gloss_core::services::MapCatalog;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

#[derive(clap::Args)]
pub struct VectorArgs {
    /// Views to sample; a built-in St Andrews set when absent.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Interior points per view, on top of corners and centre.
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn builtin_views() -> Vec<MapView> {
    let v = |url: &str, w, h, tl: (f64, f64), br: (f64, f64), zoom| {
        MapView::new(
            url,
            w,
            h,
            GeoCoord::new(tl.0, tl.1),
            GeoCoord::new(br.0, br.1),
            zoom,
        )
        .expect("built-in view is valid")
    };
    vec![
        v(
            "http://www-systems.dcs.st-and.ac.uk:8180/gloss/standrews_city_600600.jpg",
            600,
            600,
            (56.370100, -2.842174),
            (56.316349, -2.744143),
            5,
        ),
        v(
            "http://www.gloss.org/maps/standrews_wide.jpg",
            800,
            600,
            (56.40, -2.90),
            (56.30, -2.70),
            4,
        ),
        v(
            "http://www.gloss.org/maps/north_haugh.jpg",
            320,
            240,
            (56.3475, -2.8120),
            (56.3440, -2.8030),
            6,
        ),
    ]
}

fn coord_json(c: GeoCoord) -> Value {
    json!({ "latitude": c.latitude, "longitude": c.longitude })
}

fn view_json(v: &MapView) -> Value {
    json!({
        "url": v.url,
        "width": v.image_width,
        "height": v.image_height,
        "topLeft": coord_json(v.top_left),
        "bottomRight": coord_json(v.bottom_right),
        "zoom": v.zoom,
    })
}

/// Positions from the example events, included wherever a view holds them.
const LANDMARKS: [(f64, f64); 3] = [
    (56.340232849121094, -2.808),
    (56.3602, -2.807),
    (56.370232849121094, -2.808),
];

/// Corners, centre, landmarks, then `count` uniform interior points per
/// view.
pub fn vectors(views: &[MapView], count: usize, seed: u64) -> Vec<Value> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::new();
    for v in views {
        let (tl, br) = (v.top_left, v.bottom_right);
        let mut coords = vec![
            tl,
            br,
            GeoCoord::new(tl.latitude, br.longitude),
            GeoCoord::new(br.latitude, tl.longitude),
            GeoCoord::new(
                (tl.latitude + br.latitude) / 2.0,
                (tl.longitude + br.longitude) / 2.0,
            ),
        ];
        coords.extend(
            LANDMARKS
                .iter()
                .map(|&(la, lo)| GeoCoord::new(la, lo))
                .filter(|&c| gloss_core::geo::contains(v, c)),
        );
        for _ in 0..count {
            coords.push(GeoCoord::new(
                rng.random_range(br.latitude..=tl.latitude),
                rng.random_range(tl.longitude..=br.longitude),
            ));
        }
        for c in coords {
            let p = to_pixel(v, c).expect("sampled inside the view");
            out.push(json!({
                "view": view_json(v),
                "coord": coord_json(c),
                "pixel": { "x": p.x, "y": p.y },
            }));
        }
    }
    out
}

pub fn run(args: VectorArgs) -> anyhow::Result<()> {
    let views = match &args.catalog {
        Some(p) => {
            MapCatalog::load(p)
                .with_context(|| format!("loading {}", p.display()))?
                .entries
        }
        None => builtin_views(),
    };
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => {
            Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(std::io::stdout().lock()),
    };
    for v in vectors(&views, args.count, args.seed) {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}
